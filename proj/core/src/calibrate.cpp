#include "slick/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "slick/serialize.hpp"

namespace slick {

using nlohmann::json;

double PartDamagePriorTable::prob(int part_index, int damage_index) const {
  const auto& row_counts = counts.at(static_cast<size_t>(part_index));
  const double c = row_counts.at(static_cast<size_t>(damage_index));
  double total = 0.0;
  for (double v : row_counts) total += v;
  const double d = static_cast<double>(damages.size());
  if (total + alpha * d <= 0.0) return 1.0 / d;  // no observations, no smoothing
  return (c + alpha) / (total + alpha * d);
}

std::vector<double> PartDamagePriorTable::row(int part_index) const {
  std::vector<double> out(damages.size());
  for (size_t j = 0; j < damages.size(); ++j) out[j] = prob(part_index, static_cast<int>(j));
  return out;
}

int PartDamagePriorTable::part_index(PartId p) const {
  auto it = std::find(parts.begin(), parts.end(), p);
  return it == parts.end() ? -1 : static_cast<int>(it - parts.begin());
}

std::string PartDamagePriorTable::to_json() const {
  json j;
  j["parts"] = parts;
  j["damages"] = damages;
  j["counts"] = counts;
  j["alpha"] = alpha;
  return j.dump(2) + "\n";
}

PartDamagePriorTable PartDamagePriorTable::from_json(const std::string& text) {
  json j = json::parse(text);
  PartDamagePriorTable t;
  t.parts = j.at("parts").get<std::vector<PartId>>();
  t.damages = j.at("damages").get<std::vector<int>>();
  t.counts = j.at("counts").get<std::vector<std::vector<double>>>();
  t.alpha = j.at("alpha").get<double>();
  if (t.alpha < 0.0) throw std::invalid_argument("prior table: alpha must be non-negative");
  if (t.counts.size() != t.parts.size()) {
    throw std::invalid_argument("prior table: counts row count does not match parts");
  }
  for (const auto& row : t.counts) {
    if (row.size() != t.damages.size()) {
      throw std::invalid_argument("prior table: counts column count does not match damages");
    }
    for (double v : row) {
      if (v < 0.0) throw std::invalid_argument("prior table: negative count");
    }
  }
  return t;
}

void PartDamagePriorTable::save(const std::filesystem::path& path) const {
  write_text_file(path, to_json());
}

PartDamagePriorTable PartDamagePriorTable::load(const std::filesystem::path& path) {
  return from_json(read_text_file(path));
}

PartDamagePriorTable build_table(const std::vector<std::pair<PartId, int>>& annotations,
                                 const std::vector<PartId>& parts, const std::vector<int>& damages,
                                 double smoothing) {
  if (smoothing < 0.0) throw std::invalid_argument("build_table: smoothing must be non-negative");
  if (parts.empty() || damages.empty()) {
    throw std::invalid_argument("build_table: parts and damages must be non-empty");
  }
  PartDamagePriorTable t;
  t.parts = parts;
  t.damages = damages;
  t.alpha = smoothing;
  t.counts.assign(parts.size(), std::vector<double>(damages.size(), 0.0));
  for (const auto& [p, d] : annotations) {
    auto pi = std::find(parts.begin(), parts.end(), p);
    auto di = std::find(damages.begin(), damages.end(), d);
    if (pi == parts.end()) throw std::invalid_argument("build_table: unknown part id " + std::to_string(p));
    if (di == damages.end()) throw std::invalid_argument("build_table: unknown damage id " + std::to_string(d));
    t.counts[static_cast<size_t>(pi - parts.begin())][static_cast<size_t>(di - damages.begin())] += 1.0;
  }
  return t;
}

InstancePrediction calibrate_instance(const InstancePrediction& pred,
                                      const PartDamagePriorTable& table) {
  const size_t np = table.parts.size();
  const size_t nd = table.damages.size();
  if (pred.part_probs.size() != np) {
    throw std::invalid_argument("calibrate_instance: table parts do not cover prediction classes");
  }
  if (pred.damage_probs.size() != nd) {
    throw std::invalid_argument("calibrate_instance: table damages do not cover prediction classes");
  }

  // q(p) renormalized over real parts so it is a proper mixing distribution.
  std::vector<double> q = pred.part_probs;
  double qsum = 0.0;
  for (double v : q) qsum += v;
  if (qsum <= 0.0) throw std::invalid_argument("calibrate_instance: degenerate part distribution");
  for (double& v : q) v /= qsum;

  std::vector<double> mix(nd, 0.0);
  for (size_t d = 0; d < nd; ++d) {
    double m = 0.0;
    for (size_t p = 0; p < np; ++p) m += q[p] * table.prob(static_cast<int>(p), static_cast<int>(d));
    mix[d] = m;
  }

  // Constant mixture => reweighting is the identity on the simplex.
  bool constant_mix = true;
  for (size_t d = 1; d < nd; ++d) {
    if (mix[d] != mix[0]) {
      constant_mix = false;
      break;
    }
  }
  if (constant_mix) return pred;

  std::vector<double> r_star(nd);
  double norm = 0.0;
  for (size_t d = 0; d < nd; ++d) {
    r_star[d] = pred.damage_probs[d] * mix[d];
    norm += r_star[d];
  }
  if (norm <= 0.0) throw std::invalid_argument("calibrate_instance: calibrated distribution vanished");
  for (double& v : r_star) v /= norm;

  double max_r = 0.0, max_r_star = 0.0;
  for (double v : pred.damage_probs) max_r = std::max(max_r, v);
  for (double v : r_star) max_r_star = std::max(max_r_star, v);

  InstancePrediction out = pred;
  out.damage_probs = r_star;
  if (max_r > 0.0) {
    const double ratio = max_r_star / max_r;
    Tensor scaled = clamp(scale(pred.soft_mask, ratio), 0.0, 1.0);
    out.soft_mask = scaled;
  }
  out.score = score_of(out.part_probs, out.damage_probs);
  return out;
}

}  // namespace slick
