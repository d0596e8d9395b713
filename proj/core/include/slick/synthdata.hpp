#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slick/blocks.hpp"
#include "slick/graph.hpp"
#include "slick/tensor.hpp"

namespace slick {

struct Taxonomy {
  std::vector<std::string> part_names;    // ids are indices
  std::vector<std::string> damage_names;  // ids are indices (separate space)
  static Taxonomy standard();             // 6 parts / 4 damages
  int num_parts() const { return static_cast<int>(part_names.size()); }
  int num_damages() const { return static_cast<int>(damage_names.size()); }
};

// Damage ids in Taxonomy::standard().
enum DamageClass : int { kDent = 0, kScratch = 1, kCrack = 2, kFakeMud = 3 };

struct SceneSample {
  Tensor image;                // [H,W,3] in [0,1]
  std::vector<PartId> part_ids;
  std::vector<Tensor> part_masks;    // [H,W] binary, mutually disjoint
  std::vector<Tensor> damage_masks;  // [H,W] binary, contained in part union
  std::vector<std::pair<PartId, int>> labels;  // (part, damage) per damage instance
  DamageHeatmap heatmap;
  Tensor geometry;  // [H,W] signed distance to part boundaries, in [-1,1]
  uint64_t seed = 0;
  double difficulty = 0.0;

  std::vector<GroundTruthInstance> truths() const;
  void validate(const Taxonomy& taxonomy) const;  // disjointness, containment, label ranges
};

// Deterministic scene: part polygons in a canonical car layout with global
// jitter, damage blobs/scratches/cracks plus texture-only fakes, distractors
// and occlusion growing with difficulty in [0,1].
SceneSample generate(uint64_t seed, int h, int w, const Taxonomy& taxonomy, double difficulty);

// Part adjacency from rectangle contact in the canonical layout, symmetry
// from mirrored pairs (door_l <-> door_r).
StructuralPriorGraph make_graph(const Taxonomy& taxonomy);

// Canonical layout rectangles in pixel coordinates (before jitter); exposed
// so the adjacency derivation is testable against a hand-enumerated list.
std::vector<std::pair<PartId, Rect>> canonical_layout(int h, int w);

// (part, damage) co-occurrence annotations across samples; row material for
// the calibration table.
std::vector<std::pair<PartId, int>> cooccurrence(const std::vector<SceneSample>& samples);

struct Dataset {
  Taxonomy taxonomy;
  std::vector<SceneSample> samples;
};

// Directory layout: manifest.json + labels.json + per-sample SLKT tensors.
// Round trips are bit-exact.
void export_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace slick
