#include "slick/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace slick {

void LossWeights::validate() const {
  for (double v : {lambda_seg, lambda_bnd, lambda_aux, lambda_cons}) {
    if (v < 0.0) throw std::invalid_argument("loss weights must be non-negative");
  }
  if (lambda_seg + lambda_bnd + lambda_aux + lambda_cons <= 0.0) {
    throw std::invalid_argument("at least one loss weight must be positive");
  }
}

std::vector<uint8_t> binarize(const std::vector<double>& mask, double threshold) {
  std::vector<uint8_t> out(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] > threshold ? 1 : 0;
  return out;
}

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_iou: size mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] & b[i]);
    uni += (a[i] | b[i]);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double soft_mask_iou(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("soft_mask_iou: size mismatch");
  double inter = 0.0, sa = 0.0, sb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += a[i] * b[i];
    sa += a[i];
    sb += b[i];
  }
  const double uni = sa + sb - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

Tensor dice_bce(const Tensor& pred_mask, const Tensor& gt_mask) {
  return add(soft_dice(pred_mask, gt_mask), bce(pred_mask, gt_mask));
}

namespace {

std::vector<uint8_t> boundary_pixels(const std::vector<uint8_t>& m, int h, int w) {
  std::vector<uint8_t> out(m.size(), 0);
  auto at = [&](int y, int x) -> uint8_t {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0;  // outside counts as empty
    return m[static_cast<size_t>(y) * w + x];
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!at(y, x)) continue;
      const bool eroded = at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1);
      if (!eroded) out[static_cast<size_t>(y) * w + x] = 1;
    }
  }
  return out;
}

}  // namespace

double boundary(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (!same_shape(pred_mask.shape(), gt_mask.shape()) || pred_mask.rank() != 2) {
    throw std::invalid_argument("boundary expects two [H,W] masks of equal shape");
  }
  const int h = pred_mask.dim(0), w = pred_mask.dim(1);
  const auto bp = boundary_pixels(binarize(pred_mask.value()), h, w);
  const auto bg = boundary_pixels(binarize(gt_mask.value()), h, w);
  size_t inter = 0, np = 0, ng = 0;
  for (size_t i = 0; i < bp.size(); ++i) {
    inter += (bp[i] & bg[i]);
    np += bp[i];
    ng += bg[i];
  }
  if (np + ng == 0) return 0.0;
  return 1.0 - 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

namespace {

Tensor sobel_magnitude(const Tensor& mask) {
  static const std::vector<double> kSx = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  static const std::vector<double> kSy = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  const int h = mask.dim(0), w = mask.dim(1);
  Tensor m3 = reshape(mask, {h, w, 1});
  Tensor gx = conv2d(m3, Tensor::from({3, 3, 1, 1}, kSx));
  Tensor gy = conv2d(m3, Tensor::from({3, 3, 1, 1}, kSy));
  Tensor mag = sqrt_t(add_scalar(add(mul(gx, gx), mul(gy, gy)), 1e-12));
  return reshape(mag, {h, w});
}

}  // namespace

Tensor boundary_surrogate(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (!same_shape(pred_mask.shape(), gt_mask.shape()) || pred_mask.rank() != 2) {
    throw std::invalid_argument("boundary_surrogate expects two [H,W] masks of equal shape");
  }
  return soft_dice(sobel_magnitude(pred_mask), sobel_magnitude(gt_mask));
}

Tensor aux_joint(const Tensor& part_logits, const Tensor& damage_logits, int part_label,
                 int damage_label) {
  return add(ce_logits(part_logits, part_label), ce_logits(damage_logits, damage_label));
}

MatchResult match_masks(const std::vector<std::vector<uint8_t>>& pred_masks,
                        const std::vector<std::vector<uint8_t>>& truth_masks, double threshold) {
  struct Cand {
    double iou;
    int p, t;
  };
  std::vector<Cand> cands;
  for (size_t p = 0; p < pred_masks.size(); ++p) {
    for (size_t t = 0; t < truth_masks.size(); ++t) {
      const double iou = mask_iou(pred_masks[p], truth_masks[t]);
      if (iou >= threshold) cands.push_back({iou, static_cast<int>(p), static_cast<int>(t)});
    }
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.p != b.p) return a.p < b.p;
    return a.t < b.t;
  });
  MatchResult res;
  std::vector<bool> pused(pred_masks.size(), false), tused(truth_masks.size(), false);
  for (const Cand& c : cands) {
    if (pused[static_cast<size_t>(c.p)] || tused[static_cast<size_t>(c.t)]) continue;
    pused[static_cast<size_t>(c.p)] = tused[static_cast<size_t>(c.t)] = true;
    res.pairs.emplace_back(c.p, c.t);
  }
  for (size_t p = 0; p < pred_masks.size(); ++p) {
    if (!pused[p]) res.unmatched_predictions.push_back(static_cast<int>(p));
  }
  for (size_t t = 0; t < truth_masks.size(); ++t) {
    if (!tused[t]) res.unmatched_truths.push_back(static_cast<int>(t));
  }
  return res;
}

MatchResult match(const std::vector<InstancePrediction>& preds,
                  const std::vector<GroundTruthInstance>& truths) {
  std::vector<std::vector<uint8_t>> pm, tm;
  pm.reserve(preds.size());
  tm.reserve(truths.size());
  for (const auto& p : preds) pm.push_back(binarize(p.soft_mask.value()));
  for (const auto& t : truths) tm.push_back(binarize(t.mask.value()));
  return match_masks(pm, tm, 0.25);
}

Tensor consistency(const MaskForwardFn& model, const Tensor& image, const DamageHeatmap& heat,
                   GridTransform transform) {
  std::vector<Tensor> base = model(image, heat);
  Tensor timage = grid_transform(image, transform);
  DamageHeatmap theat{grid_transform(heat.map, transform)};
  std::vector<Tensor> moved = model(timage, theat);
  const GridTransform inv = inverse_of(transform);
  for (auto& m : moved) m = grid_transform(m, inv);

  std::vector<std::vector<uint8_t>> bm, mm;
  for (const auto& m : base) bm.push_back(binarize(m.value()));
  for (const auto& m : moved) mm.push_back(binarize(m.value()));
  MatchResult pairing = match_masks(bm, mm, 0.0);

  if (pairing.pairs.empty()) return Tensor::scalar(0.0);
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& [bi, mi] : pairing.pairs) {
    Tensor diff = sub(base[static_cast<size_t>(bi)], moved[static_cast<size_t>(mi)]);
    acc = add(acc, scale(l2_norm_sq(diff), 1.0 / static_cast<double>(diff.numel())));
  }
  return scale(acc, 1.0 / static_cast<double>(pairing.pairs.size()));
}

Tensor total(const std::vector<Tensor>& components, const std::vector<double>& weights) {
  if (components.size() != weights.size()) {
    throw std::invalid_argument("total: component/weight count mismatch");
  }
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("total: negative loss weight");
  }
  Tensor acc = Tensor::scalar(0.0);
  for (size_t i = 0; i < components.size(); ++i) {
    acc = add(acc, scale(components[i], weights[i]));
  }
  return acc;
}

Tensor total(const Tensor& seg, const Tensor& bnd, const Tensor& aux, const Tensor& cons,
             const LossWeights& w) {
  w.validate();
  return total({seg, bnd, aux, cons}, {w.lambda_seg, w.lambda_bnd, w.lambda_aux, w.lambda_cons});
}

}  // namespace slick
