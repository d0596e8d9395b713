#include "slick/infer.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "slick/losses.hpp"
#include "slick/serialize.hpp"

namespace slick {

using nlohmann::json;

void NmsConfig::validate() const {
  if (score_threshold < 0.0 || score_threshold > 1.0) {
    throw std::invalid_argument("nms: score_threshold must lie in [0,1]");
  }
  if (iou_threshold <= 0.0 || iou_threshold > 1.0) {
    throw std::invalid_argument("nms: iou_threshold must lie in (0,1]");
  }
  if (top_k <= 0) throw std::invalid_argument("nms: top_k must be positive");
}

std::vector<InstancePrediction> mask_nms(const std::vector<InstancePrediction>& preds,
                                         const NmsConfig& cfg) {
  cfg.validate();
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&preds](int a, int b) {
    if (preds[static_cast<size_t>(a)].score != preds[static_cast<size_t>(b)].score) {
      return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
    }
    return a < b;
  });
  std::vector<InstancePrediction> kept;
  std::vector<std::vector<uint8_t>> kept_masks;
  for (int idx : order) {
    const auto& p = preds[static_cast<size_t>(idx)];
    if (!(p.score > cfg.score_threshold)) continue;
    if (static_cast<int>(kept.size()) >= cfg.top_k) break;
    auto bm = binarize(p.soft_mask.value());
    bool suppressed = false;
    for (const auto& km : kept_masks) {
      if (mask_iou(bm, km) >= cfg.iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (suppressed) continue;
    kept.push_back(p);
    kept_masks.push_back(std::move(bm));
  }
  return kept;
}

Tensor psi_conditioning(const std::vector<InstancePrediction>& preds, int h, int w) {
  Tensor acc = Tensor::zeros({h, w});
  for (const auto& p : preds) {
    Tensor m = p.soft_mask;
    if (m.dim(0) != h || m.dim(1) != w) m = upsample_bilinear(m, h, w);
    acc = add(acc, scale(m, p.score));
  }
  return clamp(acc, 0.0, 1.0);
}

RefineResult bootstrap_refine(const Tensor& image, const DamageHeatmap& heat,
                              const StructuralPriorGraph& graph, const ModelConfig& cfg,
                              const ParamSet& params, const ForwardResult& first_pass) {
  const int h = image.dim(0), w = image.dim(1);
  ForwardOptions opts;
  opts.conditioning = psi_conditioning(first_pass.instances, h, w);
  RefineResult res{forward(image, heat, graph, cfg, params, opts), Tensor::scalar(0.0)};
  const size_t n = std::min(first_pass.instances.size(), res.refined.instances.size());
  if (n == 0) return res;
  Tensor acc = Tensor::scalar(0.0);
  for (size_t i = 0; i < n; ++i) {
    Tensor diff = sub(res.refined.instances[i].soft_mask, first_pass.instances[i].soft_mask);
    acc = add(acc, scale(l2_norm_sq(diff), 1.0 / static_cast<double>(diff.numel())));
  }
  res.refine_loss = scale(acc, 1.0 / static_cast<double>(n));
  return res;
}

std::vector<InstancePrediction> predict(const ModelParams& model, const Tensor& image,
                                        const DamageHeatmap& heat,
                                        const StructuralPriorGraph& graph, const NmsConfig& nms,
                                        const PartDamagePriorTable* table) {
  nms.validate();
  NoGrad ng;
  ForwardResult fr = forward(image, heat, graph, model.config, model.params);
  std::vector<InstancePrediction> insts = std::move(fr.instances);
  if (table != nullptr) {
    for (auto& inst : insts) inst = calibrate_instance(inst, *table);
  }
  return mask_nms(insts, nms);
}

// ---- .slkp ------------------------------------------------------------------

namespace {
constexpr char kSlkpMagic[4] = {'S', 'L', 'K', 'P'};
constexpr uint8_t kSlkpVersion = 1;
}  // namespace

void write_slkp(const std::filesystem::path& path, const PredictionFile& preds) {
  json header;
  header["classes"] = {{"parts", preds.part_names}, {"damages", preds.damage_names}};
  header["image_size"] = {preds.height, preds.width};
  json insts = json::array();
  for (size_t i = 0; i < preds.instances.size(); ++i) {
    const auto& inst = preds.instances[i];
    insts.push_back({{"score", inst.score},
                     {"part_probs", inst.part_probs},
                     {"damage_probs", inst.damage_probs},
                     {"mask_ref", i}});
  }
  header["instances"] = insts;
  const std::string htext = header.dump();

  std::vector<uint8_t> buf;
  buf.insert(buf.end(), kSlkpMagic, kSlkpMagic + 4);
  buf.push_back(kSlkpVersion);
  const uint32_t hlen = static_cast<uint32_t>(htext.size());
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(hlen >> (8 * i)));
  buf.insert(buf.end(), htext.begin(), htext.end());
  for (const auto& inst : preds.instances) append_slkt(buf, inst.mask);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

PredictionFile read_slkp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 9 || std::memcmp(buf.data(), kSlkpMagic, 4) != 0) {
    throw std::runtime_error("not an SLKP file (bad magic): " + path.string());
  }
  if (buf[4] != kSlkpVersion) throw std::runtime_error("unsupported SLKP version");
  uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i) hlen |= static_cast<uint32_t>(buf[5 + i]) << (8 * i);
  if (buf.size() < 9 + hlen) throw std::runtime_error("truncated SLKP header");
  json header = json::parse(std::string(buf.begin() + 9, buf.begin() + 9 + hlen));

  PredictionFile out;
  out.part_names = header.at("classes").at("parts").get<std::vector<std::string>>();
  out.damage_names = header.at("classes").at("damages").get<std::vector<std::string>>();
  out.height = header.at("image_size").at(0).get<int>();
  out.width = header.at("image_size").at(1).get<int>();

  std::vector<Tensor> masks;
  size_t off = 9 + hlen;
  while (off < buf.size()) {
    size_t used = 0;
    masks.push_back(parse_slkt(buf.data() + off, buf.size() - off, &used));
    off += used;
  }
  for (const auto& j : header.at("instances")) {
    SlkpInstance inst;
    inst.score = j.at("score").get<double>();
    inst.part_probs = j.at("part_probs").get<std::vector<double>>();
    inst.damage_probs = j.at("damage_probs").get<std::vector<double>>();
    const size_t ref = j.at("mask_ref").get<size_t>();
    if (ref >= masks.size()) throw std::runtime_error("SLKP mask_ref out of range");
    inst.mask = masks[ref];
    out.instances.push_back(std::move(inst));
  }
  return out;
}

PredictionFile to_prediction_file(const std::vector<InstancePrediction>& preds, int h, int w,
                                  const std::vector<std::string>& part_names,
                                  const std::vector<std::string>& damage_names) {
  PredictionFile out;
  out.height = h;
  out.width = w;
  out.part_names = part_names;
  out.damage_names = damage_names;
  for (const auto& p : preds) {
    out.instances.push_back(SlkpInstance{p.score, p.part_probs, p.damage_probs, p.soft_mask});
  }
  return out;
}

std::vector<InstancePrediction> from_prediction_file(const PredictionFile& file) {
  std::vector<InstancePrediction> out;
  for (const auto& inst : file.instances) {
    InstancePrediction p;
    p.soft_mask = inst.mask;
    p.part_probs = inst.part_probs;
    p.damage_probs = inst.damage_probs;
    p.score = inst.score;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace slick
