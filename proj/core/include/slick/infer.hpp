#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slick/blocks.hpp"
#include "slick/calibrate.hpp"

namespace slick {

struct NmsConfig {
  double score_threshold = 0.3;  // in [0,1]
  double iou_threshold = 0.5;    // in (0,1]
  int top_k = 100;               // cap on kept instances
  void validate() const;
};

// Greedy mask suppression: sort by descending score (ties by lower original
// index), keep while score > score_threshold, binarized IoU against every
// kept mask < iou_threshold, and at most top_k survivors.
std::vector<InstancePrediction> mask_nms(const std::vector<InstancePrediction>& preds,
                                         const NmsConfig& cfg);

// Conditioning channel for bootstrap refinement: clamp01 of the
// score-weighted sum of soft masks.
Tensor psi_conditioning(const std::vector<InstancePrediction>& preds, int h, int w);

struct RefineResult {
  ForwardResult refined;
  Tensor refine_loss;  // mean squared pass-1 / pass-2 mask disagreement
};

// Second forward pass conditioned on the model's own first-pass predictions.
RefineResult bootstrap_refine(const Tensor& image, const DamageHeatmap& heat,
                              const StructuralPriorGraph& graph, const ModelConfig& cfg,
                              const ParamSet& params, const ForwardResult& first_pass);

// Student-only deployment path: forward -> optional calibration -> NMS.
// Runs without gradient recording.
std::vector<InstancePrediction> predict(const ModelParams& model, const Tensor& image,
                                        const DamageHeatmap& heat,
                                        const StructuralPriorGraph& graph, const NmsConfig& nms,
                                        const PartDamagePriorTable* table = nullptr);

// ---- .slkp prediction container ---------------------------------------------
// Layout: magic "SLKP", u8 version, u32 little-endian JSON header length, the
// JSON header, then one SLKT soft-mask tensor per instance in order.
// Header: {"classes": {...}, "image_size": [H,W], "instances": [
//   {"score":..., "part_probs":[...], "damage_probs":[...], "mask_ref": i}]}.

struct SlkpInstance {
  double score;
  std::vector<double> part_probs;
  std::vector<double> damage_probs;
  Tensor mask;  // [H,W] soft mask
};

struct PredictionFile {
  int height = 0, width = 0;
  std::vector<std::string> part_names;
  std::vector<std::string> damage_names;
  std::vector<SlkpInstance> instances;
};

void write_slkp(const std::filesystem::path& path, const PredictionFile& preds);
PredictionFile read_slkp(const std::filesystem::path& path);

PredictionFile to_prediction_file(const std::vector<InstancePrediction>& preds, int h, int w,
                                  const std::vector<std::string>& part_names,
                                  const std::vector<std::string>& damage_names);
// Value-level predictions reconstructed from a file (mask/probs/score only).
std::vector<InstancePrediction> from_prediction_file(const PredictionFile& file);

}  // namespace slick
