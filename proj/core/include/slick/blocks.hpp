#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slick/graph.hpp"
#include "slick/rng.hpp"
#include "slick/tensor.hpp"

namespace slick {

// Multi-scale features; level ell+1 has ceil-half the spatial size of level
// ell and every level shares the channel count.
struct FeaturePyramid {
  std::vector<Tensor> levels;  // each [H_l, W_l, C]
  void validate() const;       // throws on a malformed pyramid
};

struct DamageHeatmap {
  Tensor map;  // [H,W,1], values in [0,1]
  static DamageHeatmap zeros(int h, int w);
};

struct InstanceQuery {
  Tensor embedding;                       // [d]
  std::optional<PartId> part_assignment;  // set from ground truth or argmax
};

struct ModelConfig {
  int channels = 8;       // C
  int levels = 3;         // L
  int query_dim = 16;     // d
  int num_queries = 8;    // N
  int kernel_size = 1;    // k for the query->kernel map
  int num_parts = 6;      // |Y_p|
  int num_damages = 4;    // |Y_d|
  int se_reduction = 2;   // r, must divide channels
  int fusion_dim = 8;     // |z|

  void validate() const;
  // Strict capacity dominance in C, L, d, N; required between the
  // distillation teacher and student.
  static void validate_teacher_student(const ModelConfig& teacher, const ModelConfig& student);

  int class_head_hidden() const { return 2 * query_dim; }
  int class_head_out() const { return num_parts + 1 + num_damages + 1; }  // +1: no-object slots
  int encoder_width() const { return fusion_dim; }
};

// One predicted instance: soft mask, class logits, score, query embedding.
struct InstancePrediction {
  Tensor mask_logits;    // [H,W], pre-sigmoid, upsampled to input resolution
  Tensor soft_mask;      // [H,W] = sigmoid(mask_logits)
  Tensor part_logits;    // [num_parts+1], last slot = no-object
  Tensor damage_logits;  // [num_damages+1]
  Tensor embedding;      // [d]
  std::vector<double> part_probs;    // over real parts (softmax incl. no-object, sliced)
  std::vector<double> damage_probs;  // over real damages
  double score = 0.0;
  std::optional<PartId> part_assignment;
};

double score_of(const std::vector<double>& part_probs, const std::vector<double>& damage_probs);

// Named parameter bag; ordering is deterministic (std::map) so that
// checkpoints and gradient reductions are reproducible.
struct ParamSet {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::vector<Tensor> all() const;
  void zero_grad();
  void set_requires_grad(bool v);
  ParamSet clone() const;
};

struct ModelParams {
  ModelConfig config;
  ParamSet params;

  static ModelParams init(const ModelConfig& cfg, uint64_t seed);
  void save(const std::filesystem::path& dir) const;
  static ModelParams load(const std::filesystem::path& dir);
};

// ---- blocks ----------------------------------------------------------------

// Eq.-(1)-style encoder: stem conv then pool+conv per level; every level has
// `channels` channels and ceil-half spatial size of the previous one.
// x is [H,W,3] or [H,W,4] (optional conditioning channel; missing channel is
// treated as zeros).
FeaturePyramid encode(const Tensor& x, const ModelConfig& cfg, const ParamSet& params);

// Attention over tokens [T,C] biased by the part graph:
// softmax(QK^T/sqrt(dk) + Delta) V, where Delta_ij is bias_pos for
// adjacent-or-symmetric assigned pairs, bias_neg for assigned unrelated
// pairs, 0 on the diagonal or when either token is unassigned.
Tensor prior_attention(const Tensor& tokens, const StructuralPriorGraph& graph,
                       const std::vector<std::optional<PartId>>& token_parts, const Tensor& w_q,
                       const Tensor& w_k, const Tensor& w_v);

// Builds the [T,T] bias matrix used above (exposed for tests).
Tensor prior_bias_matrix(const StructuralPriorGraph& graph,
                         const std::vector<std::optional<PartId>>& token_parts, int count);

enum class MlpActivation { kRelu, kIdentity };

// Per-pixel MLP over Concat[F, heat]; heat is resampled to F's grid by
// nearest neighbor when the sizes differ.
Tensor loc_attention(const Tensor& features, const DamageHeatmap& heat, const Tensor& w1,
                     const Tensor& b1, const Tensor& w2, const Tensor& b2,
                     MlpActivation activation = MlpActivation::kRelu);

struct Rect {
  int y0, x0, y1, x1;  // half-open: rows [y0,y1), cols [x0,x1)
};

// Deterministic heatmap rasterizer: box interiors contribute 0.7, scratch
// maps add on top, everything clamps to [0,1].
DamageHeatmap weak_heatmap(int h, int w, const std::vector<Rect>& boxes,
                           const std::vector<Tensor>& scratch_maps);

// Query-conditioned mask head: kernel_i = phi(q_i), mask_i = sigma(kernel_i * F).
// Returned masks live on F's grid; phi_weights maps [d] -> [k*k*C].
std::vector<Tensor> isr_masks(const std::vector<InstanceQuery>& queries, const Tensor& features,
                              const Tensor& phi_weights, int kernel_size);
// Pre-sigmoid variant used by the distillation path.
std::vector<Tensor> isr_mask_logits(const std::vector<InstanceQuery>& queries,
                                    const Tensor& features, const Tensor& phi_weights,
                                    int kernel_size);

// Squeeze-excitation channel calibration: out[..,k] = F[..,k] *
// sigma(W2 relu(W1 GAP(F)))_k.
Tensor c3_calibrate(const Tensor& features, const Tensor& w1, const Tensor& w2);

// Knowledge fusion: three independently parameterized conv-pool encoders over
// the image, concatenated (syn, geom, real) through an MLP to a [fusion_dim]
// vector.
Tensor fuse_knowledge(const Tensor& image, const ModelConfig& cfg, const ParamSet& params);

// FiLM: out = gamma(z) * F + beta(z), per channel, broadcast over space.
Tensor film_modulate(const Tensor& features, const Tensor& z, const Tensor& gamma_w,
                     const Tensor& gamma_b, const Tensor& beta_w, const Tensor& beta_b);

struct ForwardResult {
  std::vector<InstancePrediction> instances;
  FeaturePyramid pyramid;
  std::vector<Tensor> attention_maps;  // per level, [H_l,W_l], normalized to sum 1
  Tensor fused_z;                      // [fusion_dim]
};

struct ForwardOptions {
  // Ground-truth part assignments per query (training); when absent the
  // argmax of the first-pass part logits is used.
  std::optional<std::vector<std::optional<PartId>>> part_assignments;
  // Extra conditioning channel [H,W] in [0,1]; zeros when absent.
  std::optional<Tensor> conditioning;
};

ForwardResult forward(const Tensor& image, const DamageHeatmap& heat,
                      const StructuralPriorGraph& graph, const ModelConfig& cfg,
                      const ParamSet& params, const ForwardOptions& opts = {});

}  // namespace slick
