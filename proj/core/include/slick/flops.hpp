#pragma once

#include <string>

#include "slick/blocks.hpp"

namespace slick {

// Analytic multiply count of one forward pass, split into terms that scale
// with pixel count and terms that do not.  Mirrors forward() exactly;
// additions and activation evaluations are not counted.
struct FlopCount {
  double spatial = 0.0;   // proportional to H*W (per-level pixel work)
  double constant = 0.0;  // query/head/MLP work independent of image size
  double total() const { return spatial + constant; }
};

FlopCount count_forward_flops(const ModelConfig& cfg, int h, int w);

double flop_ratio(const ModelConfig& teacher, const ModelConfig& student, int h, int w);

// Least-squares slope of log(total flops) vs log(pixel count).
double scaling_exponent(const ModelConfig& cfg, const std::vector<int>& sizes);

struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  int runs = 0;
};

struct BenchReport {
  int input_h = 0, input_w = 0;
  LatencyStats teacher;
  LatencyStats student;
  double teacher_flops = 0.0;
  double student_flops = 0.0;
  double flop_ratio = 0.0;
  double wallclock_speedup = 0.0;  // teacher_median / student_median

  std::string to_json() const;
  std::string to_table() const;
};

}  // namespace slick
