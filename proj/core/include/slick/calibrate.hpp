#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slick/blocks.hpp"

namespace slick {

// Count-derived conditional damage distribution per part,
// P(d|p) = (count(d,p) + alpha) / (sum_d' count(d',p) + alpha*|D|),
// with rows that have no observations falling back to uniform.
struct PartDamagePriorTable {
  std::vector<PartId> parts;
  std::vector<int> damages;
  std::vector<std::vector<double>> counts;  // [parts][damages], raw
  double alpha = 1.0;

  double prob(int part_index, int damage_index) const;
  std::vector<double> row(int part_index) const;  // sums to 1
  int part_index(PartId p) const;                 // -1 when absent

  std::string to_json() const;
  static PartDamagePriorTable from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static PartDamagePriorTable load(const std::filesystem::path& path);
};

// Builds the table from (part, damage) co-occurrence annotations.
PartDamagePriorTable build_table(const std::vector<std::pair<PartId, int>>& annotations,
                                 const std::vector<PartId>& parts, const std::vector<int>& damages,
                                 double smoothing);

// Prior-reweighted damage distribution r*(d) ~ r(d) * sum_p q(p) P(d|p),
// renormalized; the mask is confidence-rescaled by max r*/max r and the
// score recomputed.  A constant mixture (uniform prior rows) leaves the
// prediction untouched bit for bit, since rescale-and-renormalize is then
// the identity on the simplex.
InstancePrediction calibrate_instance(const InstancePrediction& pred,
                                      const PartDamagePriorTable& table);

}  // namespace slick
