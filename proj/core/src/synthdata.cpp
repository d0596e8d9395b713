#include "slick/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "json.hpp"
#include "slick/serialize.hpp"

namespace slick {

using nlohmann::json;

Taxonomy Taxonomy::standard() {
  Taxonomy t;
  t.part_names = {"hood", "door_l", "door_r", "bumper_f", "bumper_r", "roof"};
  t.damage_names = {"dent", "scratch", "crack", "fake_mud"};
  return t;
}

namespace {

enum Part : PartId { kHood = 0, kDoorL = 1, kDoorR = 2, kBumperF = 3, kBumperR = 4, kRoof = 5 };

// Shared grid fractions; adjacent parts share grid lines so rectangle contact
// survives any uniform scale/offset.
constexpr double kRows[] = {0.10, 0.20, 0.42, 0.68, 0.80};
constexpr double kCols[] = {0.18, 0.25, 0.32, 0.68, 0.75, 0.82};

std::vector<std::pair<PartId, Rect>> layout_from_grid(const int ry[5], const int cx[6]) {
  return {
      {kHood, Rect{ry[1], cx[1], ry[2], cx[4]}},
      {kDoorL, Rect{ry[2], cx[0], ry[3], cx[2]}},
      {kDoorR, Rect{ry[2], cx[3], ry[3], cx[5]}},
      {kBumperF, Rect{ry[0], cx[1], ry[1], cx[4]}},
      {kBumperR, Rect{ry[3], cx[1], ry[4], cx[4]}},
      {kRoof, Rect{ry[2], cx[2], ry[3], cx[3]}},
  };
}

bool rects_touch(const Rect& a, const Rect& b) {
  const bool rows_overlap = std::max(a.y0, b.y0) < std::min(a.y1, b.y1);
  const bool cols_overlap = std::max(a.x0, b.x0) < std::min(a.x1, b.x1);
  if ((a.y1 == b.y0 || b.y1 == a.y0) && cols_overlap) return true;
  if ((a.x1 == b.x0 || b.x1 == a.x0) && rows_overlap) return true;
  return false;
}

struct Canvas {
  int h, w;
  std::vector<double> rgb;  // [h*w*3]
  double& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

struct PaintedScene {
  std::vector<std::vector<uint8_t>> part_masks;  // per part, h*w
  std::vector<uint8_t> part_union;
};

void fill_rect(Canvas& cv, const Rect& r, double cr, double cg, double cb,
               std::vector<uint8_t>* mask) {
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      cv.at(y, x, 0) = cr;
      cv.at(y, x, 1) = cg;
      cv.at(y, x, 2) = cb;
      if (mask) (*mask)[static_cast<size_t>(y) * cv.w + x] = 1;
    }
  }
}

// Manhattan distance to the part-region boundary via multi-source BFS; sign
// is positive inside parts and negative outside.
std::vector<double> signed_distance_field(const std::vector<uint8_t>& inside, int h, int w) {
  const size_t n = inside.size();
  std::vector<int> dist(n, -1);
  std::deque<int> queue;
  auto id = [w](int y, int x) { return y * w + x; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!inside[static_cast<size_t>(id(y, x))]) continue;
      bool edge = (y == 0 || x == 0 || y == h - 1 || x == w - 1);
      if (!edge) {
        edge = !inside[static_cast<size_t>(id(y - 1, x))] || !inside[static_cast<size_t>(id(y + 1, x))] ||
               !inside[static_cast<size_t>(id(y, x - 1))] || !inside[static_cast<size_t>(id(y, x + 1))];
      }
      if (edge) {
        dist[static_cast<size_t>(id(y, x))] = 0;
        queue.push_back(id(y, x));
      }
    }
  }
  if (queue.empty()) {  // no parts at all
    return std::vector<double>(n, -1.0);
  }
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    const int y = cur / w, x = cur % w;
    const int d = dist[static_cast<size_t>(cur)];
    const int ny[4] = {y - 1, y + 1, y, y};
    const int nx[4] = {x, x, x - 1, x + 1};
    for (int k = 0; k < 4; ++k) {
      if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
      const int ni = id(ny[k], nx[k]);
      if (dist[static_cast<size_t>(ni)] < 0) {
        dist[static_cast<size_t>(ni)] = d + 1;
        queue.push_back(ni);
      }
    }
  }
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    const double v = std::min(1.0, dist[i] / 12.0);
    out[i] = inside[i] ? v : -v;
  }
  return out;
}

struct DamageBrush {
  std::vector<uint8_t> mask;       // h*w, before part clipping
  std::vector<double> bump;        // geometry perturbation in [0,1], dents only
  std::vector<double> scratch_map; // heatmap contribution, scratches only
};

DamageBrush ellipse_brush(int h, int w, double cy, double cx, double ry, double rx, bool with_bump) {
  DamageBrush b;
  b.mask.assign(static_cast<size_t>(h) * w, 0);
  if (with_bump) b.bump.assign(static_cast<size_t>(h) * w, 0.0);
  const int y0 = std::max(0, static_cast<int>(cy - ry - 1)), y1 = std::min(h - 1, static_cast<int>(cy + ry + 1));
  const int x0 = std::max(0, static_cast<int>(cx - rx - 1)), x1 = std::min(w - 1, static_cast<int>(cx + rx + 1));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = (y - cy) / ry, dx = (x - cx) / rx;
      const double r2 = dy * dy + dx * dx;
      if (r2 <= 1.0) {
        b.mask[static_cast<size_t>(y) * w + x] = 1;
        if (with_bump) b.bump[static_cast<size_t>(y) * w + x] = 1.0 - r2;
      }
    }
  }
  return b;
}

void stamp_line(std::vector<uint8_t>& mask, int h, int w, double y0, double x0, double y1,
                double x1, int thickness) {
  const double len = std::max(1.0, std::hypot(y1 - y0, x1 - x0));
  const int steps = static_cast<int>(len * 2.0) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const int cy = static_cast<int>(y0 + t * (y1 - y0) + 0.5);
    const int cx = static_cast<int>(x0 + t * (x1 - x0) + 0.5);
    for (int dy = 0; dy < thickness; ++dy) {
      for (int dx = 0; dx < thickness; ++dx) {
        const int yy = cy + dy, xx = cx + dx;
        if (yy >= 0 && yy < h && xx >= 0 && xx < w) mask[static_cast<size_t>(yy) * w + xx] = 1;
      }
    }
  }
}

Rect bounding_rect(const std::vector<uint8_t>& mask, int h, int w) {
  int y0 = h, x0 = w, y1 = 0, x1 = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask[static_cast<size_t>(y) * w + x]) continue;
      y0 = std::min(y0, y);
      x0 = std::min(x0, x);
      y1 = std::max(y1, y + 1);
      x1 = std::max(x1, x + 1);
    }
  }
  return Rect{y0, x0, y1, x1};
}

}  // namespace

std::vector<std::pair<PartId, Rect>> canonical_layout(int h, int w) {
  int ry[5], cx[6];
  for (int i = 0; i < 5; ++i) ry[i] = static_cast<int>(kRows[i] * h + 0.5);
  for (int i = 0; i < 6; ++i) cx[i] = static_cast<int>(kCols[i] * w + 0.5);
  return layout_from_grid(ry, cx);
}

StructuralPriorGraph make_graph(const Taxonomy& taxonomy) {
  StructuralPriorGraph g;
  g.parts.resize(static_cast<size_t>(taxonomy.num_parts()));
  for (int i = 0; i < taxonomy.num_parts(); ++i) g.parts[static_cast<size_t>(i)] = i;
  const auto layout = canonical_layout(64, 64);
  for (size_t i = 0; i < layout.size(); ++i) {
    for (size_t j = i + 1; j < layout.size(); ++j) {
      if (rects_touch(layout[i].second, layout[j].second)) {
        g.add_adjacent(layout[i].first, layout[j].first);
      }
    }
  }
  // Mirror pairs about the vertical axis.
  if (taxonomy.num_parts() > std::max<int>(kDoorL, kDoorR)) g.add_symmetric(kDoorL, kDoorR);
  g.validate();
  return g;
}

SceneSample generate(uint64_t seed, int h, int w, const Taxonomy& taxonomy, double difficulty) {
  if (h < 32 || w < 32) throw std::invalid_argument("generate: image must be at least 32x32");
  if (difficulty < 0.0 || difficulty > 1.0) {
    throw std::invalid_argument("generate: difficulty must lie in [0,1]");
  }
  if (taxonomy.num_parts() != 6 || taxonomy.num_damages() != 4) {
    throw std::invalid_argument("generate: generator requires the standard 6-part/4-damage taxonomy");
  }
  Rng rng(seed);
  SceneSample out;
  out.seed = seed;
  out.difficulty = difficulty;

  // background
  Canvas cv{h, w, std::vector<double>(static_cast<size_t>(h) * w * 3, 0.0)};
  for (int y = 0; y < h; ++y) {
    const double g = 0.30 + 0.25 * static_cast<double>(y) / h;
    for (int x = 0; x < w; ++x) {
      cv.at(y, x, 0) = g;
      cv.at(y, x, 1) = g;
      cv.at(y, x, 2) = g * 1.04;
    }
  }

  // jittered part grid
  const double sc = rng.uniform(0.88, 1.04);
  const double dy = rng.uniform(-0.04, 0.04);
  const double dx = rng.uniform(-0.04, 0.04);
  int ry[5], cx[6];
  for (int i = 0; i < 5; ++i) ry[i] = static_cast<int>((kRows[i] * sc + dy) * h + 0.5);
  for (int i = 0; i < 6; ++i) cx[i] = static_cast<int>((kCols[i] * sc + dx) * w + 0.5);
  const auto layout = layout_from_grid(ry, cx);

  static const double kPartColors[6][3] = {
      {0.72, 0.18, 0.16},  // hood
      {0.16, 0.45, 0.72},  // door_l
      {0.18, 0.50, 0.70},  // door_r
      {0.36, 0.36, 0.40},  // bumper_f
      {0.32, 0.33, 0.37},  // bumper_r
      {0.70, 0.62, 0.20},  // roof
  };
  const double brightness = rng.uniform(0.85, 1.10);

  std::vector<std::vector<uint8_t>> part_masks(6, std::vector<uint8_t>(static_cast<size_t>(h) * w, 0));
  for (const auto& [pid, rect] : layout) {
    const double* c = kPartColors[pid];
    fill_rect(cv, rect, c[0] * brightness, c[1] * brightness, c[2] * brightness,
              &part_masks[static_cast<size_t>(pid)]);
  }

  // occlusion bar; removed pixels disappear from every mask
  const int occ_w = static_cast<int>(0.15 * difficulty * w + 0.5);
  if (occ_w >= 1) {
    const int occ_x = rng.range(cx[0], std::max(cx[0], cx[5] - occ_w));
    Rect bar{0, occ_x, h, std::min(w, occ_x + occ_w)};
    fill_rect(cv, bar, 0.22, 0.22, 0.24, nullptr);
    for (auto& m : part_masks) {
      for (int y = bar.y0; y < bar.y1; ++y)
        for (int x = bar.x0; x < bar.x1; ++x) m[static_cast<size_t>(y) * w + x] = 0;
    }
  }

  std::vector<uint8_t> part_union(static_cast<size_t>(h) * w, 0);
  for (const auto& m : part_masks) {
    for (size_t i = 0; i < part_union.size(); ++i) part_union[i] |= m[i];
  }
  std::vector<double> geometry = signed_distance_field(part_union, h, w);

  // damage instances
  const int n_damage = 1 + static_cast<int>(rng.below(2)) + (difficulty >= 0.75 ? 1 : 0);
  const double size_factor = 1.0 - 0.35 * difficulty;
  std::vector<Rect> heat_boxes;
  std::vector<Tensor> scratch_maps;

  for (int inst = 0; inst < n_damage; ++inst) {
    const int pid = static_cast<int>(rng.below(6));
    const int dmg = static_cast<int>(rng.below(4));
    const Rect& pr = layout[static_cast<size_t>(pid)].second;
    const auto& pmask = part_masks[static_cast<size_t>(pid)];

    std::vector<uint8_t> dmask;
    std::vector<double> bump;
    std::vector<double> smap;
    bool placed = false;
    for (int attempt = 0; attempt < 3 && !placed; ++attempt) {
      const double cyf = rng.uniform(pr.y0 + 2.0, std::max(pr.y0 + 3.0, pr.y1 - 2.0));
      const double cxf = rng.uniform(pr.x0 + 2.0, std::max(pr.x0 + 3.0, pr.x1 - 2.0));
      const double extent = std::min(pr.y1 - pr.y0, pr.x1 - pr.x0) * size_factor;
      std::vector<uint8_t> shape(static_cast<size_t>(h) * w, 0);
      std::vector<double> shape_bump;
      std::vector<double> shape_smap;
      if (dmg == kDent || dmg == kFakeMud) {
        const double rr = std::max(2.5, extent * rng.uniform(0.38, 0.60));
        DamageBrush b = ellipse_brush(h, w, cyf, cxf, rr, rr * rng.uniform(0.7, 1.3), dmg == kDent);
        shape = std::move(b.mask);
        shape_bump = std::move(b.bump);
      } else if (dmg == kScratch) {
        const double ang = rng.uniform(0.0, 6.283185307179586);
        const double len = std::max(4.0, extent * rng.uniform(0.9, 1.6));
        const double ey = cyf + std::sin(ang) * len, ex = cxf + std::cos(ang) * len;
        stamp_line(shape, h, w, cyf, cxf, ey, ex, rng.range(1, 2));
        shape_smap.assign(static_cast<size_t>(h) * w, 0.0);
        for (size_t i = 0; i < shape.size(); ++i) shape_smap[i] = shape[i] ? 0.6 : 0.0;
      } else {  // crack: jagged polyline
        double py = cyf, px = cxf;
        const int segs = rng.range(3, 5);
        for (int s = 0; s < segs; ++s) {
          const double ang = rng.uniform(0.0, 6.283185307179586);
          const double len = std::max(3.0, extent * rng.uniform(0.25, 0.5));
          const double ny = py + std::sin(ang) * len, nx = px + std::cos(ang) * len;
          stamp_line(shape, h, w, py, px, ny, nx, 1);
          py = ny;
          px = nx;
        }
      }
      // clip to the visible pixels of the chosen part
      size_t kept = 0;
      for (size_t i = 0; i < shape.size(); ++i) {
        shape[i] = shape[i] & pmask[i];
        kept += shape[i];
      }
      if (kept >= 4) {
        dmask = std::move(shape);
        bump = std::move(shape_bump);
        smap = std::move(shape_smap);
        placed = true;
      }
    }
    if (!placed) continue;

    // paint
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        if (!dmask[i]) continue;
        if (dmg == kDent) {
          const double shade = 1.0 - 0.55 * bump[i];
          for (int c = 0; c < 3; ++c) cv.at(y, x, c) *= shade;
          geometry[i] -= 0.5 * bump[i];
        } else if (dmg == kScratch) {
          for (int c = 0; c < 3; ++c) cv.at(y, x, c) += 0.35;
          geometry[i] -= 0.15;
        } else if (dmg == kCrack) {
          for (int c = 0; c < 3; ++c) cv.at(y, x, c) -= 0.40;
          geometry[i] -= 0.2;
        } else {  // fake_mud: texture only, geometry untouched
          static const double mud[3] = {0.36, 0.26, 0.16};
          const double speck = 0.9 + 0.2 * rng.uniform();
          for (int c = 0; c < 3; ++c) cv.at(y, x, c) = 0.2 * cv.at(y, x, c) + 0.8 * mud[c] * speck;
        }
      }
    }

    if (dmg == kScratch) {
      scratch_maps.push_back(Tensor::from({h, w}, smap));
    } else {
      heat_boxes.push_back(bounding_rect(dmask, h, w));
    }
    out.damage_masks.push_back(Tensor::from(
        {h, w}, std::vector<double>(dmask.begin(), dmask.end())));
    out.labels.emplace_back(pid, dmg);
  }

  // distractors: glare streaks and decals, unlabeled
  const int n_distract = static_cast<int>(3.0 * difficulty + 0.5);
  for (int i = 0; i < n_distract; ++i) {
    if (rng.below(2) == 0) {
      std::vector<uint8_t> streak(static_cast<size_t>(h) * w, 0);
      const double y0 = rng.uniform(0.0, h - 1.0), x0 = rng.uniform(0.0, w - 1.0);
      const double ang = rng.uniform(0.0, 6.283185307179586);
      const double len = rng.uniform(0.2, 0.5) * std::min(h, w);
      stamp_line(streak, h, w, y0, x0, y0 + std::sin(ang) * len, x0 + std::cos(ang) * len, 1);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (streak[static_cast<size_t>(y) * w + x])
            for (int c = 0; c < 3; ++c) cv.at(y, x, c) += 0.30;
    } else {
      const double cyf = rng.uniform(4.0, h - 4.0), cxf = rng.uniform(4.0, w - 4.0);
      DamageBrush b = ellipse_brush(h, w, cyf, cxf, rng.uniform(2.0, 4.0), rng.uniform(2.0, 4.0), false);
      const double col[3] = {rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9)};
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (b.mask[static_cast<size_t>(y) * w + x])
            for (int c = 0; c < 3; ++c) cv.at(y, x, c) = col[c];
    }
  }

  // pixel noise, then clamp
  for (double& v : cv.rgb) v += rng.uniform(-0.02, 0.02);
  for (double& v : cv.rgb) v = std::min(1.0, std::max(0.0, v));

  out.image = Tensor::from({h, w, 3}, std::move(cv.rgb));
  for (int pid = 0; pid < 6; ++pid) {
    out.part_ids.push_back(pid);
    out.part_masks.push_back(Tensor::from(
        {h, w}, std::vector<double>(part_masks[static_cast<size_t>(pid)].begin(),
                                    part_masks[static_cast<size_t>(pid)].end())));
  }
  for (double& v : geometry) v = std::min(1.0, std::max(-1.0, v));
  out.geometry = Tensor::from({h, w}, std::move(geometry));
  out.heatmap = weak_heatmap(h, w, heat_boxes, scratch_maps);
  return out;
}

std::vector<GroundTruthInstance> SceneSample::truths() const {
  std::vector<GroundTruthInstance> out;
  for (size_t i = 0; i < damage_masks.size(); ++i) {
    out.push_back(GroundTruthInstance{damage_masks[i], labels[i].first, labels[i].second});
  }
  return out;
}

void SceneSample::validate(const Taxonomy& taxonomy) const {
  const size_t n = image.numel() / 3;
  std::vector<int> owner(n, -1);
  for (size_t p = 0; p < part_masks.size(); ++p) {
    const auto& m = part_masks[p].value();
    for (size_t i = 0; i < n; ++i) {
      if (m[i] == 0.0) continue;
      if (owner[i] >= 0) throw std::runtime_error("scene invariant violated: part masks overlap");
      owner[i] = static_cast<int>(p);
    }
  }
  for (size_t d = 0; d < damage_masks.size(); ++d) {
    const auto& m = damage_masks[d].value();
    for (size_t i = 0; i < n; ++i) {
      if (m[i] != 0.0 && owner[i] < 0) {
        throw std::runtime_error("scene invariant violated: damage outside part union");
      }
    }
  }
  if (labels.size() != damage_masks.size()) {
    throw std::runtime_error("scene invariant violated: label/mask count mismatch");
  }
  for (const auto& [p, d] : labels) {
    if (p < 0 || p >= taxonomy.num_parts() || d < 0 || d >= taxonomy.num_damages()) {
      throw std::runtime_error("scene invariant violated: label outside taxonomy");
    }
  }
  for (double v : heatmap.map.value()) {
    if (v < 0.0 || v > 1.0) throw std::runtime_error("scene invariant violated: heatmap range");
  }
}

std::vector<std::pair<PartId, int>> cooccurrence(const std::vector<SceneSample>& samples) {
  std::vector<std::pair<PartId, int>> out;
  for (const auto& s : samples) {
    out.insert(out.end(), s.labels.begin(), s.labels.end());
  }
  return out;
}

// ---- dataset I/O -------------------------------------------------------------

void export_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json manifest;
  manifest["taxonomy"] = {{"parts", dataset.taxonomy.part_names},
                          {"damages", dataset.taxonomy.damage_names}};
  json seeds = json::array();
  json samples = json::array();
  json labels = json::array();
  for (size_t i = 0; i < dataset.samples.size(); ++i) {
    const SceneSample& s = dataset.samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu", i);
    samples.push_back(name);
    seeds.push_back(s.seed);
    const fs::path sdir = dir / name;
    fs::create_directories(sdir);
    write_slkt(sdir / "image.slkt", s.image);
    write_slkt(sdir / "geometry.slkt", s.geometry);
    write_slkt(sdir / "heatmap.slkt", s.heatmap.map);
    for (size_t p = 0; p < s.part_masks.size(); ++p) {
      char f[32];
      std::snprintf(f, sizeof(f), "part_%02zu.slkt", p);
      write_slkt(sdir / f, s.part_masks[p]);
    }
    for (size_t d = 0; d < s.damage_masks.size(); ++d) {
      char f[32];
      std::snprintf(f, sizeof(f), "damage_%02zu.slkt", d);
      write_slkt(sdir / f, s.damage_masks[d]);
    }
    json lab;
    lab["seed"] = s.seed;
    lab["difficulty"] = s.difficulty;
    lab["part_ids"] = s.part_ids;
    json pairs = json::array();
    for (const auto& [p, d] : s.labels) pairs.push_back({p, d});
    lab["labels"] = pairs;
    labels.push_back(lab);
  }
  manifest["seeds"] = seeds;
  manifest["samples"] = samples;
  manifest["count"] = dataset.samples.size();
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_text_file(dir / "labels.json", labels.dump(2) + "\n");
}

Dataset import_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  json manifest = json::parse(read_text_file(dir / "manifest.json"));
  json labels = json::parse(read_text_file(dir / "labels.json"));
  Dataset out;
  out.taxonomy.part_names = manifest.at("taxonomy").at("parts").get<std::vector<std::string>>();
  out.taxonomy.damage_names = manifest.at("taxonomy").at("damages").get<std::vector<std::string>>();
  const auto names = manifest.at("samples").get<std::vector<std::string>>();
  for (size_t i = 0; i < names.size(); ++i) {
    const fs::path sdir = dir / names[i];
    SceneSample s;
    s.image = read_slkt(sdir / "image.slkt");
    s.geometry = read_slkt(sdir / "geometry.slkt");
    s.heatmap.map = read_slkt(sdir / "heatmap.slkt");
    const json& lab = labels.at(i);
    s.seed = lab.at("seed").get<uint64_t>();
    s.difficulty = lab.at("difficulty").get<double>();
    s.part_ids = lab.at("part_ids").get<std::vector<PartId>>();
    for (size_t p = 0; p < s.part_ids.size(); ++p) {
      char f[32];
      std::snprintf(f, sizeof(f), "part_%02zu.slkt", p);
      s.part_masks.push_back(read_slkt(sdir / f));
    }
    for (const auto& pr : lab.at("labels")) {
      s.labels.emplace_back(pr.at(0).get<PartId>(), pr.at(1).get<int>());
    }
    for (size_t d = 0; d < s.labels.size(); ++d) {
      char f[32];
      std::snprintf(f, sizeof(f), "damage_%02zu.slkt", d);
      s.damage_masks.push_back(read_slkt(sdir / f));
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace slick
