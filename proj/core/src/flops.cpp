#include "slick/flops.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace slick {

FlopCount count_forward_flops(const ModelConfig& cfg, int h, int w) {
  cfg.validate();
  if (h < (1 << cfg.levels) || w < (1 << cfg.levels)) {
    throw std::invalid_argument("count_forward_flops: image too small for pyramid depth");
  }
  const double c = cfg.channels, d = cfg.query_dim, n = cfg.num_queries;
  const double z = cfg.fusion_dim, g = cfg.encoder_width();
  const double k2 = static_cast<double>(cfg.kernel_size) * cfg.kernel_size;
  const double hd = cfg.class_head_hidden(), out = cfg.class_head_out();

  FlopCount f;

  // encoder: stem + (pool, conv) per extra level; attention map per level
  std::vector<double> px;  // pixels per level
  int lh = h, lw = w;
  px.push_back(static_cast<double>(lh) * lw);
  f.spatial += px[0] * 9.0 * 4.0 * c;  // stem conv, 4 input channels
  for (int l = 2; l <= cfg.levels; ++l) {
    lh = (lh + 1) / 2;
    lw = (lw + 1) / 2;
    const double p = static_cast<double>(lh) * lw;
    px.push_back(p);
    f.spatial += p * c;             // avg pool scale
    f.spatial += p * 9.0 * c * c;   // 3x3 conv
  }
  for (double p : px) f.spatial += p * (2.0 * c + 1.0);  // channel-energy attention map

  const double pl = px.back();  // coarsest-level pixels

  // localization-aware attention MLP at the coarsest level
  f.spatial += pl * ((c + 1.0) * c + c * c);

  // squeeze-excitation calibration
  f.constant += c;                      // GAP scale
  f.constant += c * (c / cfg.se_reduction) * 2.0;
  f.spatial += pl * c;                  // channel gate multiply

  // knowledge fusion: three conv-pool streams over the RGB image + MLP
  const double ph2 = std::ceil(h / 2.0) * std::ceil(w / 2.0);
  const double ph4 = std::ceil(std::ceil(h / 2.0) / 2.0) * std::ceil(std::ceil(w / 2.0) / 2.0);
  f.spatial += 3.0 * (ph2 * 3.0 + ph2 * 9.0 * 3.0 * g + ph4 * g);
  f.constant += 3.0 * g;               // per-stream GAP scale
  f.constant += 3.0 * g * z + z * z;   // fusion MLP

  // FiLM
  f.constant += 2.0 * z * c;
  f.spatial += pl * c;  // gamma multiply (beta is an add)

  // query cross-attention pooling over coarsest-level tokens
  f.spatial += pl * c * d;        // keys
  f.spatial += pl * c * c;        // values
  f.constant += n * d * d;        // query projection
  f.spatial += n * pl * d + n * pl;  // scores + scale
  f.spatial += n * pl * c;        // weighted sum
  f.constant += n * c * d;        // embedding projection

  // two class-head passes (assignment pass + final)
  f.constant += 2.0 * n * (d * hd + hd * out);

  // prior-constrained attention over query tokens
  f.constant += 3.0 * n * d * d + n * n * d + n * n + n * n * d;

  // mask head: phi, correlation at the coarsest level, bilinear upsample
  f.constant += n * d * k2 * c;
  f.spatial += n * pl * k2 * c;
  f.spatial += 6.0 * n * static_cast<double>(h) * w;

  return f;
}

double flop_ratio(const ModelConfig& teacher, const ModelConfig& student, int h, int w) {
  return count_forward_flops(teacher, h, w).total() / count_forward_flops(student, h, w).total();
}

double scaling_exponent(const ModelConfig& cfg, const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("scaling_exponent: need at least two sizes");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double m = static_cast<double>(sizes.size());
  for (int s : sizes) {
    const double x = std::log(static_cast<double>(s) * s);
    const double y = std::log(count_forward_flops(cfg, s, s).total());
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

std::string BenchReport::to_json() const {
  nlohmann::json j;
  j["input_size"] = {input_h, input_w};
  j["teacher"] = {{"median_ms", teacher.median_ms}, {"p95_ms", teacher.p95_ms}, {"runs", teacher.runs}};
  j["student"] = {{"median_ms", student.median_ms}, {"p95_ms", student.p95_ms}, {"runs", student.runs}};
  j["flops"] = {{"teacher", teacher_flops}, {"student", student_flops}, {"ratio", flop_ratio}};
  j["wallclock_speedup"] = wallclock_speedup;
  return j.dump(2) + "\n";
}

std::string BenchReport::to_table() const {
  std::ostringstream os;
  os << "model    median_ms  p95_ms     mflops\n";
  char line[128];
  std::snprintf(line, sizeof(line), "teacher  %9.3f  %7.3f  %9.3f\n", teacher.median_ms,
                teacher.p95_ms, teacher_flops / 1e6);
  os << line;
  std::snprintf(line, sizeof(line), "student  %9.3f  %7.3f  %9.3f\n", student.median_ms,
                student.p95_ms, student_flops / 1e6);
  os << line;
  std::snprintf(line, sizeof(line), "flop ratio %.3f   wallclock speedup %.3f\n", flop_ratio,
                wallclock_speedup);
  os << line;
  return os.str();
}

}  // namespace slick
