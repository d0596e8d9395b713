#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace slick {

using PartId = int;
using IdPair = std::pair<PartId, PartId>;  // stored with first < second

// Part-relationship graph: adjacency and left/right symmetry over part ids,
// plus the attention bias magnitudes applied to related / unrelated pairs.
struct StructuralPriorGraph {
  std::vector<PartId> parts;
  std::set<IdPair> adjacency;
  std::set<IdPair> symmetry;
  double bias_pos = 1.0;
  double bias_neg = -1.0;

  bool has_part(PartId p) const;
  bool related(PartId a, PartId b) const;  // adjacent or symmetric
  void add_adjacent(PartId a, PartId b);
  void add_symmetric(PartId a, PartId b);

  // Throws std::invalid_argument on self-edges, unknown ids, or
  // non-positive/non-negative bias ordering (bias_pos > 0 > bias_neg).
  void validate() const;

  std::string to_json() const;
  static StructuralPriorGraph from_json(const std::string& json_text);
  void save(const std::filesystem::path& path) const;
  static StructuralPriorGraph load(const std::filesystem::path& path);

  // Edge list used for relational distillation: adjacency plus symmetry,
  // deduplicated, in deterministic order.
  std::vector<IdPair> edges() const;
};

IdPair ordered_pair(PartId a, PartId b);

}  // namespace slick
