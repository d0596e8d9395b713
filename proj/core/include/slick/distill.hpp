#pragma once

#include <map>
#include <vector>

#include "slick/blocks.hpp"
#include "slick/graph.hpp"
#include "slick/tensor.hpp"

namespace slick {

struct DistillConfig {
  double tau = 2.0;  // mask-KD temperature; also the class temperature in appendix mode
  double lambda_m = 1.0;
  double lambda_c = 1.0;
  double lambda_f = 0.5;
  double lambda_g = 0.5;
  std::vector<double> alpha_scales = {0.5, 0.5};  // must sum to 1
  double lambda_kd = 1.0;
  double lambda_multi = 0.5;
  double lambda_refine = 0.1;
  double lambda_attn = 0.0;  // attention-transfer weight; off by default

  enum class Mode { kStandard, kAppendix };
  Mode mode = Mode::kStandard;
  double lambda1 = 1.0, lambda2 = 1.0, lambda3 = 0.5;

  void validate() const;
  double class_temperature() const { return mode == Mode::kAppendix ? tau : 1.0; }
  // Composite-loss preset (lambda1 CE + lambda2 KD + lambda3 feature): same
  // machinery with graph and mask terms off and temperature-scaled class KD.
  static DistillConfig appendix_preset(double l1, double l2, double l3, double temperature);
};

// Learned student->teacher alignment maps: one 1x1 channel projection per
// shared pyramid level plus an embedding projection.  Square maps start at
// the identity so self-distillation is an exact fixed point.
struct DistillProjections {
  ParamSet params;
  int shared_levels = 0;
  static DistillProjections init(const ModelConfig& teacher, const ModelConfig& student,
                                 uint64_t seed = 0x51);
  const Tensor& level(int l) const { return params.at("proj.level" + std::to_string(l)); }
  const Tensor& embed() const { return params.at("proj.embed"); }
};

struct PairedOutputs {
  std::vector<std::pair<InstancePrediction, InstancePrediction>> instances;  // (teacher, student)
  std::vector<std::pair<Tensor, Tensor>> features;   // per shared level, raw
  std::vector<Tensor> feature_proj;                  // channel projection per shared level
  std::vector<std::pair<Tensor, Tensor>> attention;  // per shared level
  std::map<PartId, Tensor> teacher_nodes;  // node embeddings, teacher embedding dim
  std::map<PartId, Tensor> student_nodes;  // student embeddings projected to teacher dim
  std::vector<IdPair> edges;
};

// Greedy IoU pairing (threshold 0.1) of teacher and student instances plus
// level-aligned features, attention maps and graph node embeddings.
PairedOutputs pair_outputs(const ForwardResult& teacher, const ForwardResult& student,
                           const StructuralPriorGraph& graph, const DistillProjections& proj);

// Per-pixel Bernoulli KL between temperature-scaled mask logits, averaged
// over pixels and instances.
Tensor mask_kd(const std::vector<std::pair<Tensor, Tensor>>& mask_logit_pairs, double tau);

// Plain cross-entropy -sum p_T log p_S between two distributions.
Tensor class_kd(const Tensor& teacher_probs, const Tensor& student_probs);
// KL variant used inside the composite: class_kd minus the teacher entropy,
// zero exactly when the distributions coincide.
Tensor class_kl(const Tensor& teacher_probs, const Tensor& student_probs);

// Per-channel standardization over spatial positions (mean 0, var 1, eps 1e-5).
Tensor standardize_channels(const Tensor& features, double eps = 1e-5);

// Sum over shared levels of ||std(F_T) - std(proj(F_S))||^2 with the student
// level resampled to the teacher grid and channel-projected first.
Tensor feature_kd(const std::vector<std::pair<Tensor, Tensor>>& feature_pairs,
                  const std::vector<Tensor>& projections);

// Sum over edges of ||(h_i-h_j) - (h'_i-h'_j)||^2.
Tensor graph_kd(const std::map<PartId, Tensor>& teacher_nodes,
                const std::map<PartId, Tensor>& student_nodes, const std::vector<IdPair>& edges);

// Sum over levels of L1 distance between attention maps, each resampled to a
// common grid and normalized to unit mass first.
Tensor attn_transfer(const std::vector<std::pair<Tensor, Tensor>>& attention_pairs);

struct DistillTerms {
  Tensor mask;
  Tensor cls;
  Tensor feature;
  Tensor graph;
  Tensor attn;
  Tensor total;  // lambda_m*mask + lambda_c*cls + lambda_f*feature + lambda_g*graph
};

DistillTerms distill_loss(const PairedOutputs& pair, const DistillConfig& cfg);

// Restriction of a pairing to one pyramid scale: masks resampled to that
// level's grid, features and attention reduced to the single level.
PairedOutputs pair_at_scale(const PairedOutputs& pair, int scale);

// sum_s alpha_s * distill_loss(pairs[s]).
Tensor multi_scale(const std::vector<PairedOutputs>& pairs_per_scale,
                   const std::vector<double>& alpha, const DistillConfig& cfg);

// L_seg + lambda_KD*distill + lambda_multi*multi + lambda_refine*refine.
Tensor total_objective(const Tensor& seg_loss, const Tensor& distill, const Tensor& multi,
                       const Tensor& refine, const DistillConfig& cfg);

struct LipschitzResult {
  double lhs;
  double rhs;
  bool holds;
};

// ||softmax(z_S/tau) - softmax(z_T/tau)||_1 <= (sqrt(K)/tau) ||z_S - z_T||_2,
// with the abstract constant instantiated as sqrt(K).
LipschitzResult lipschitz_check(const std::vector<double>& z_teacher,
                                const std::vector<double>& z_student, double tau);

double entropy(const std::vector<double>& probs);

}  // namespace slick
