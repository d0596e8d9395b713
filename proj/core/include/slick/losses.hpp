#pragma once

#include <functional>
#include <vector>

#include "slick/blocks.hpp"
#include "slick/tensor.hpp"

namespace slick {

struct LossWeights {
  double lambda_seg = 1.0;
  double lambda_bnd = 0.5;
  double lambda_aux = 0.5;
  double lambda_cons = 0.1;
  void validate() const;  // all >= 0, at least one positive
};

struct GroundTruthInstance {
  Tensor mask;  // [H,W] binary
  PartId part_id = 0;
  int damage_id = 0;
};

struct MatchResult {
  std::vector<std::pair<int, int>> pairs;  // (prediction index, truth index)
  std::vector<int> unmatched_predictions;
  std::vector<int> unmatched_truths;
};

// Binarization convention used for every IoU in the project: strictly above
// 0.5, so an all-0.5 mask is empty.
std::vector<uint8_t> binarize(const std::vector<double>& mask, double threshold = 0.5);
double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);
double soft_mask_iou(const std::vector<double>& a, const std::vector<double>& b);

// Dice (smoothed with 1 in numerator and denominator) plus BCE.
Tensor dice_bce(const Tensor& pred_mask, const Tensor& gt_mask);

// Hard boundary metric in [0,1]: boundaries are set pixels minus their
// 4-neighborhood erosion after binarizing at 0.5; returns 0 when both
// boundaries are empty.  Not differentiable; see boundary_surrogate.
double boundary(const Tensor& pred_mask, const Tensor& gt_mask);

// Differentiable stand-in used for training: Dice between Sobel gradient
// magnitude maps of the two masks.
Tensor boundary_surrogate(const Tensor& pred_mask, const Tensor& gt_mask);

// Part CE + damage CE for one matched instance.
Tensor aux_joint(const Tensor& part_logits, const Tensor& damage_logits, int part_label,
                 int damage_label);

// Greedy descending-IoU matching at threshold 0.25; each index used at most
// once, ties broken by lower prediction then lower truth index.
MatchResult match(const std::vector<InstancePrediction>& preds,
                  const std::vector<GroundTruthInstance>& truths);
MatchResult match_masks(const std::vector<std::vector<uint8_t>>& pred_masks,
                        const std::vector<std::vector<uint8_t>>& truth_masks, double threshold);

// Prediction equivariance under a grid transform: mean squared difference
// between the base masks and the inverse-transformed masks of the
// transformed input, after greedy IoU pairing.
using MaskForwardFn =
    std::function<std::vector<Tensor>(const Tensor& image, const DamageHeatmap& heat)>;
Tensor consistency(const MaskForwardFn& model, const Tensor& image, const DamageHeatmap& heat,
                   GridTransform transform);

// Weighted sum of component losses; throws on a negative weight.
Tensor total(const std::vector<Tensor>& components, const std::vector<double>& weights);
Tensor total(const Tensor& seg, const Tensor& bnd, const Tensor& aux, const Tensor& cons,
             const LossWeights& w);

}  // namespace slick
