#include "slick/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace slick {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local int g_no_grad_depth = 0;

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  if (shape_numel(impl->shape) != impl->value.size()) {
    throw std::invalid_argument("tensor data length does not match shape " + shape_str(impl->shape));
  }
  return impl;
}

void ensure_grad(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->value.size(), 0.0);
}

// Shared recording path: marks the output differentiable and registers the
// pullback if any input needs gradients and recording is enabled.
void maybe_record(const Tensor& out, std::vector<Tensor> inputs, std::function<void()> pullback) {
  Tape* tape = Tape::active();
  if (tape == nullptr || NoGrad::active()) return;
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) needs = true;
  }
  if (!needs) return;
  std::vector<std::shared_ptr<detail::TensorImpl>> parents;
  parents.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (!in.defined()) continue;
    parents.push_back(in.impl());
    if (in.requires_grad()) ensure_grad(in.impl());
  }
  const_cast<Tensor&>(out).set_requires_grad(true);
  ensure_grad(out.impl());
  tape->record(out, std::move(parents), std::move(pullback));
}

}  // namespace

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(s));
    n *= static_cast<size_t>(d);
  }
  return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double v) {
  size_t n = shape_numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("data length does not match shape " + shape_str(shape));
  }
  check_finite(data, "from");
  return Tensor(make_impl(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.set_requires_grad(true);
  return t;
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) {
    throw std::runtime_error("tensor has no gradient accumulator");
  }
  return impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  ensure_grad(impl_);
  return impl_->grad;
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  if (v) ensure_grad(impl_);
  return *this;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor, got " + shape_str(shape()));
  return impl_->value[0];
}

double Tensor::at(const std::vector<int>& idx) const {
  if (idx.size() != impl_->shape.size()) throw std::invalid_argument("index rank mismatch");
  size_t flat = 0;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= impl_->shape[i]) throw std::out_of_range("tensor index out of range");
    flat = flat * static_cast<size_t>(impl_->shape[i]) + static_cast<size_t>(idx[i]);
  }
  return impl_->value[flat];
}

Tensor Tensor::clone() const { return Tensor::from(impl_->shape, impl_->value); }

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const Tensor& out, std::vector<std::shared_ptr<detail::TensorImpl>> parents,
                  std::function<void()> pullback) {
  out.impl()->tape = this;
  out.impl()->node_id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{out.impl(), std::move(parents), std::move(pullback)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (loss.impl()->tape != this || loss.impl()->node_id < 0) {
    throw std::invalid_argument("loss tensor was not recorded on this tape");
  }
  ensure_grad(loss.impl());
  loss.impl()->grad[0] += 1.0;
  for (int i = loss.impl()->node_id; i >= 0; --i) {
    nodes_[static_cast<size_t>(i)].pullback();
  }
  // Non-finite gradients surface here rather than silently reaching the
  // optimizer.  Every intermediate is some node's output and every leaf is
  // some node's parent with node_id -1, so each buffer is checked once.
  auto check = [](const std::vector<double>& g) {
    for (double x : g) {
      if (!std::isfinite(x)) throw std::runtime_error("non-finite gradient during backward");
    }
  };
  for (int i = loss.impl()->node_id; i >= 0; --i) {
    const Node& node = nodes_[static_cast<size_t>(i)];
    check(node.out->grad);
    for (const auto& p : node.parents) {
      if (p->node_id < 0 && !p->grad.empty()) check(p->grad);
    }
  }
}

NoGrad::NoGrad() : prev_(g_no_grad_depth > 0) { ++g_no_grad_depth; }
NoGrad::~NoGrad() { --g_no_grad_depth; }
bool NoGrad::active() { return g_no_grad_depth > 0; }

// ---- elementwise -----------------------------------------------------------

namespace {

Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op,
                          double (*f)(double, double),
                          void (*pull)(const std::vector<double>&, const std::vector<double>&,
                                       const std::vector<double>&, const std::vector<double>&,
                                       std::vector<double>*, std::vector<double>*)) {
  if (!same_shape(a.shape(), b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i], b.value()[i]);
  check_finite(out, op);
  Tensor o = Tensor::from(a.shape(), std::move(out));
  auto ai = a.impl(), bi = b.impl(), oi = o.impl();
  maybe_record(o, {a, b}, [ai, bi, oi, pull]() {
    pull(ai->value, bi->value, oi->value, oi->grad,
         ai->requires_grad ? &ai->grad : nullptr, bi->requires_grad ? &bi->grad : nullptr);
  });
  return o;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](const std::vector<double>&, const std::vector<double>&, const std::vector<double>&,
         const std::vector<double>& g, std::vector<double>* ga, std::vector<double>* gb) {
        for (size_t i = 0; i < g.size(); ++i) {
          if (ga) (*ga)[i] += g[i];
          if (gb) (*gb)[i] += g[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](const std::vector<double>&, const std::vector<double>&, const std::vector<double>&,
         const std::vector<double>& g, std::vector<double>* ga, std::vector<double>* gb) {
        for (size_t i = 0; i < g.size(); ++i) {
          if (ga) (*ga)[i] += g[i];
          if (gb) (*gb)[i] -= g[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](const std::vector<double>& av, const std::vector<double>& bv, const std::vector<double>&,
         const std::vector<double>& g, std::vector<double>* ga, std::vector<double>* gb) {
        for (size_t i = 0; i < g.size(); ++i) {
          if (ga) (*ga)[i] += g[i] * bv[i];
          if (gb) (*gb)[i] += g[i] * av[i];
        }
      });
}

namespace {

Tensor unary_elementwise(const Tensor& a, const char* op, std::function<double(double)> f,
                         std::function<double(double x, double y, double g)> df) {
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = f(a.value()[i]);
  check_finite(out, op);
  Tensor o = Tensor::from(a.shape(), std::move(out));
  auto ai = a.impl(), oi = o.impl();
  maybe_record(o, {a}, [ai, oi, df]() {
    if (!ai->requires_grad) return;
    for (size_t i = 0; i < oi->grad.size(); ++i) {
      ai->grad[i] += df(ai->value[i], oi->value[i], oi->grad[i]);
    }
  });
  return o;
}

}  // namespace

Tensor scale(const Tensor& a, double s) {
  return unary_elementwise(
      a, "scale", [s](double x) { return x * s; },
      [s](double, double, double g) { return g * s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_elementwise(
      a, "add_scalar", [s](double x) { return x + s; },
      [](double, double, double g) { return g; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor recip(const Tensor& a) {
  return unary_elementwise(
      a, "recip", [](double x) { return 1.0 / x; },
      [](double, double y, double g) { return -g * y * y; });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_elementwise(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y, double g) { return 0.5 * g / y; });
}

Tensor log_t(const Tensor& a) {
  return unary_elementwise(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double, double g) { return g / x; });
}

Tensor exp_t(const Tensor& a) {
  return unary_elementwise(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y, double g) { return g * y; });
}

Tensor relu(const Tensor& a) {
  return unary_elementwise(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_elementwise(
      a, "sigmoid",
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y, double g) { return g * y * (1.0 - y); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
  return unary_elementwise(
      a, "clamp", [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double, double g) { return (x > lo && x < hi) ? g : 0.0; });
}

Tensor mul_scalar_t(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("mul_scalar_t: scale must be a one-element tensor");
  double sv = s.value()[0];
  std::vector<double> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * sv;
  check_finite(out, "mul_scalar_t");
  Tensor o = Tensor::from(a.shape(), std::move(out));
  auto ai = a.impl(), si = s.impl(), oi = o.impl();
  maybe_record(o, {a, s}, [ai, si, oi]() {
    double sv2 = si->value[0];
    if (ai->requires_grad) {
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * sv2;
    }
    if (si->requires_grad) {
      double acc = 0.0;
      for (size_t i = 0; i < oi->grad.size(); ++i) acc += oi->grad[i] * ai->value[i];
      si->grad[0] += acc;
    }
  });
  return o;
}

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul expects rank-2 tensors");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = bv + p * n;
      double* orow = out.data() + i * n;
      for (int j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  check_finite(out, "matmul");
  Tensor o = Tensor::from({m, n}, std::move(out));
  auto ai = a.impl(), bi = b.impl(), oi = o.impl();
  maybe_record(o, {a, b}, [ai, bi, oi, m, k, n]() {
    const std::vector<double>& g = oi->grad;
    if (ai->requires_grad) {  // dA = G * B^T
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          const double gij = g[static_cast<size_t>(i) * n + j];
          for (int p = 0; p < k; ++p) ai->grad[i * k + p] += gij * bi->value[p * n + j];
        }
    }
    if (bi->requires_grad) {  // dB = A^T * G
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const double aip = ai->value[i * k + p];
          for (int j = 0; j < n; ++j) bi->grad[p * n + j] += aip * g[static_cast<size_t>(i) * n + j];
        }
    }
  });
  return o;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose expects a rank-2 tensor");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.value()[static_cast<size_t>(i) * n + j];
  Tensor o = Tensor::from({n, m}, std::move(out));
  auto ai = a.impl(), oi = o.impl();
  maybe_record(o, {a}, [ai, oi, m, n]() {
    if (!ai->requires_grad) return;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ai->grad[static_cast<size_t>(i) * n + j] += oi->grad[static_cast<size_t>(j) * m + i];
  });
  return o;
}

// ---- shape -----------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) +
                                " -> " + shape_str(shape));
  }
  Tensor o = Tensor::from(std::move(shape), a.value());
  auto ai = a.impl(), oi = o.impl();
  maybe_record(o, {a}, [ai, oi]() {
    if (!ai->requires_grad) return;
    for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
  });
  return o;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank()) throw std::invalid_argument("concat_last: rank mismatch");
  for (int i = 0; i + 1 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) throw std::invalid_argument("concat_last: leading dims differ");
  }
  const int ca = a.dim(a.rank() - 1), cb = b.dim(b.rank() - 1);
  const size_t rows = a.numel() / static_cast<size_t>(ca);
  Shape os = a.shape();
  os.back() = ca + cb;
  std::vector<double> out(rows * static_cast<size_t>(ca + cb));
  for (size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.value().data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  Tensor o = Tensor::from(std::move(os), std::move(out));
  auto ai = a.impl(), bi = b.impl(), oi = o.impl();
  maybe_record(o, {a, b}, [ai, bi, oi, rows, ca, cb]() {
    for (size_t r = 0; r < rows; ++r) {
      const double* g = oi->grad.data() + r * (ca + cb);
      if (ai->requires_grad)
        for (int i = 0; i < ca; ++i) ai->grad[r * ca + i] += g[i];
      if (bi->requires_grad)
        for (int i = 0; i < cb; ++i) bi->grad[r * cb + i] += g[ca + i];
    }
  });
  return o;
}

Tensor slice_last(const Tensor& a, int from, int to) {
  const int c = a.dim(a.rank() - 1);
  if (from < 0 || to > c || from >= to) throw std::invalid_argument("slice_last: bad range");
  const int w = to - from;
  const size_t rows = a.numel() / static_cast<size_t>(c);
  Shape os = a.shape();
  os.back() = w;
  std::vector<double> out(rows * static_cast<size_t>(w));
  for (size_t r = 0; r < rows; ++r)
    std::copy_n(a.value().data() + r * c + from, w, out.data() + r * w);
  Tensor o = Tensor::from(std::move(os), std::move(out));
  auto ai = a.impl(), oi = o.impl();
  maybe_record(o, {a}, [ai, oi, rows, c, w, from]() {
    if (!ai->requires_grad) return;
    for (size_t r = 0; r < rows; ++r)
      for (int i = 0; i < w; ++i) ai->grad[r * c + from + i] += oi->grad[r * w + i];
  });
  return o;
}

Tensor row(const Tensor& a, int i) {
  if (a.rank() != 2) throw std::invalid_argument("row expects a rank-2 tensor");
  if (i < 0 || i >= a.dim(0)) throw std::out_of_range("row index out of range");
  const int n = a.dim(1);
  std::vector<double> out(a.value().begin() + static_cast<size_t>(i) * n,
                          a.value().begin() + static_cast<size_t>(i + 1) * n);
  Tensor o = Tensor::from({n}, std::move(out));
  auto ai = a.impl(), oi = o.impl();
  maybe_record(o, {a}, [ai, oi, i, n]() {
    if (!ai->requires_grad) return;
    for (int j = 0; j < n; ++j) ai->grad[static_cast<size_t>(i) * n + j] += oi->grad[j];
  });
  return o;
}

// ---- reductions / maps -----------------------------------------------------

Tensor softmax(const Tensor& a, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("softmax: temperature must be positive");
  const int k = a.dim(a.rank() - 1);
  const size_t rows = a.numel() / static_cast<size_t>(k);
  std::vector<double> out(a.numel());
  for (size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * k;
    double mx = x[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, x[i]);
    double denom = 0.0;
    double* y = out.data() + r * k;
    for (int i = 0; i < k; ++i) {
      y[i] = std::exp((x[i] - mx) / temperature);
      denom += y[i];
    }
    for (int i = 0; i < k; ++i) y[i] /= denom;
  }
  check_finite(out, "softmax");
  Tensor o = Tensor::from(a.shape(), std::move(out));
  auto ai = a.impl(), oi = o.impl();
  maybe_record(o, {a}, [ai, oi, rows, k, temperature]() {
    if (!ai->requires_grad) return;
    for (size_t r = 0; r < rows; ++r) {
      const double* y = oi->value.data() + r * k;
      const double* g = oi->grad.data() + r * k;
      double dot = 0.0;
      for (int i = 0; i < k; ++i) dot += g[i] * y[i];
      for (int i = 0; i < k; ++i) ai->grad[r * k + i] += y[i] * (g[i] - dot) / temperature;
    }
  });
  return o;
}

namespace {

Tensor reduce_all(const Tensor& a, const char* op, double scale_out,
                  std::function<double(double)> map, std::function<double(double)> dmap) {
  double acc = 0.0;
  for (double x : a.value()) acc += map(x);
  acc *= scale_out;
  Tensor o = Tensor::scalar(acc);
  check_finite(o.value(), op);
  auto ai = a.impl(), oi = o.impl();
  maybe_record(o, {a}, [ai, oi, scale_out, dmap]() {
    if (!ai->requires_grad) return;
    const double g = oi->grad[0] * scale_out;
    for (size_t i = 0; i < ai->value.size(); ++i) ai->grad[i] += g * dmap(ai->value[i]);
  });
  return o;
}

}  // namespace

Tensor sum_all(const Tensor& a) {
  return reduce_all(a, "sum", 1.0, [](double x) { return x; }, [](double) { return 1.0; });
}

Tensor mean_all(const Tensor& a) {
  return reduce_all(a, "mean", 1.0 / static_cast<double>(a.numel()),
                    [](double x) { return x; }, [](double) { return 1.0; });
}

Tensor l1_norm(const Tensor& a) {
  return reduce_all(a, "l1_norm", 1.0, [](double x) { return std::fabs(x); },
                    [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor l2_norm_sq(const Tensor& a) {
  return reduce_all(a, "l2_norm_sq", 1.0, [](double x) { return x * x; },
                    [](double x) { return 2.0 * x; });
}

Tensor l2_norm(const Tensor& a) { return sqrt_t(add_scalar(l2_norm_sq(a), 1e-24)); }

// ---- spatial ---------------------------------------------------------------

namespace {

void expect_hwc(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw std::invalid_argument(std::string(op) + " expects an [H,W,C] tensor");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride,
              Padding padding) {
  expect_hwc(x, "conv2d");
  if (kernel.rank() != 4) throw std::invalid_argument("conv2d kernel must be [kh,kw,cin,cout]");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int h = x.dim(0), w = x.dim(1), ci = x.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), kci = kernel.dim(2), co = kernel.dim(3);
  if (kci != ci) {
    throw std::invalid_argument("conv2d: input channels " + std::to_string(ci) +
                                " do not match kernel channels " + std::to_string(kci));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co)) {
    throw std::invalid_argument("conv2d: bias must be [cout]");
  }
  int oh, ow, pad_top, pad_left;
  if (padding == Padding::kSame) {
    oh = (h + stride - 1) / stride;
    ow = (w + stride - 1) / stride;
    const int pad_h = std::max(0, (oh - 1) * stride + kh - h);
    const int pad_w = std::max(0, (ow - 1) * stride + kw - w);
    pad_top = pad_h / 2;
    pad_left = pad_w / 2;
  } else {
    if (h < kh || w < kw) throw std::invalid_argument("conv2d: input smaller than kernel");
    oh = (h - kh) / stride + 1;
    ow = (w - kw) / stride + 1;
    pad_top = pad_left = 0;
  }
  std::vector<double> out(static_cast<size_t>(oh) * ow * co, 0.0);
  const double* xv = x.value().data();
  const double* kv = kernel.value().data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* orow = out.data() + (static_cast<size_t>(oy) * ow + ox) * co;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad_top + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad_left + kx;
          if (ix < 0 || ix >= w) continue;
          const double* xrow = xv + (static_cast<size_t>(iy) * w + ix) * ci;
          const double* krow = kv + (static_cast<size_t>(ky) * kw + kx) * ci * co;
          for (int c = 0; c < ci; ++c) {
            const double xc = xrow[c];
            const double* kk = krow + static_cast<size_t>(c) * co;
            for (int oc = 0; oc < co; ++oc) orow[oc] += xc * kk[oc];
          }
        }
      }
      if (bias.defined()) {
        for (int oc = 0; oc < co; ++oc) orow[oc] += bias.value()[oc];
      }
    }
  }
  check_finite(out, "conv2d");
  Tensor o = Tensor::from({oh, ow, co}, std::move(out));
  auto xi = x.impl(), ki = kernel.impl(), oi = o.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> inputs = {x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  maybe_record(o, inputs, [xi, ki, bi, oi, h, w, ci, kh, kw, co, oh, ow, stride, pad_top, pad_left]() {
    const double* g = oi->grad.data();
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double* grow = g + (static_cast<size_t>(oy) * ow + ox) * co;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad_top + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad_left + kx;
            if (ix < 0 || ix >= w) continue;
            const size_t xoff = (static_cast<size_t>(iy) * w + ix) * ci;
            const size_t koff = (static_cast<size_t>(ky) * kw + kx) * ci * co;
            for (int c = 0; c < ci; ++c) {
              const double xc = xi->value[xoff + c];
              const double* kk = ki->value.data() + koff + static_cast<size_t>(c) * co;
              double gx = 0.0;
              for (int oc = 0; oc < co; ++oc) {
                const double go = grow[oc];
                gx += go * kk[oc];
                if (ki->requires_grad) ki->grad[koff + static_cast<size_t>(c) * co + oc] += go * xc;
              }
              if (xi->requires_grad) xi->grad[xoff + c] += gx;
            }
          }
        }
        if (bi && bi->requires_grad) {
          for (int oc = 0; oc < co; ++oc) bi->grad[oc] += grow[oc];
        }
      }
    }
  });
  return o;
}

Tensor avg_pool2(const Tensor& x) {
  expect_hwc(x, "avg_pool2");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  std::vector<double> out(static_cast<size_t>(oh) * ow * c, 0.0);
  for (int oy = 0; oy < oh; ++oy) {
    const int y1 = std::min(2 * oy + 1, h - 1);
    for (int ox = 0; ox < ow; ++ox) {
      const int x1 = std::min(2 * ox + 1, w - 1);
      const int count = (y1 - 2 * oy + 1) * (x1 - 2 * ox + 1);
      double* orow = out.data() + (static_cast<size_t>(oy) * ow + ox) * c;
      for (int iy = 2 * oy; iy <= y1; ++iy)
        for (int ix = 2 * ox; ix <= x1; ++ix) {
          const double* xr = x.value().data() + (static_cast<size_t>(iy) * w + ix) * c;
          for (int ch = 0; ch < c; ++ch) orow[ch] += xr[ch];
        }
      for (int ch = 0; ch < c; ++ch) orow[ch] /= count;
    }
  }
  Tensor o = Tensor::from({oh, ow, c}, std::move(out));
  auto xi = x.impl(), oi = o.impl();
  maybe_record(o, {x}, [xi, oi, h, w, c, oh, ow]() {
    if (!xi->requires_grad) return;
    for (int oy = 0; oy < oh; ++oy) {
      const int y1 = std::min(2 * oy + 1, h - 1);
      for (int ox = 0; ox < ow; ++ox) {
        const int x1 = std::min(2 * ox + 1, w - 1);
        const int count = (y1 - 2 * oy + 1) * (x1 - 2 * ox + 1);
        const double* grow = oi->grad.data() + (static_cast<size_t>(oy) * ow + ox) * c;
        for (int iy = 2 * oy; iy <= y1; ++iy)
          for (int ix = 2 * ox; ix <= x1; ++ix) {
            double* gx = xi->grad.data() + (static_cast<size_t>(iy) * w + ix) * c;
            for (int ch = 0; ch < c; ++ch) gx[ch] += grow[ch] / count;
          }
      }
    }
  });
  return o;
}

Tensor channel_mean(const Tensor& x) {
  expect_hwc(x, "channel_mean");
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  std::vector<double> out(static_cast<size_t>(c), 0.0);
  for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p)
    for (int ch = 0; ch < c; ++ch) out[ch] += x.value()[p * c + ch];
  for (int ch = 0; ch < c; ++ch) out[ch] *= inv;
  Tensor o = Tensor::from({c}, std::move(out));
  auto xi = x.impl(), oi = o.impl();
  maybe_record(o, {x}, [xi, oi, h, w, c, inv]() {
    if (!xi->requires_grad) return;
    for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p)
      for (int ch = 0; ch < c; ++ch) xi->grad[p * c + ch] += oi->grad[ch] * inv;
  });
  return o;
}

Tensor broadcast_c(const Tensor& v, int h, int w) {
  if (v.rank() != 1) throw std::invalid_argument("broadcast_c expects a rank-1 tensor");
  const int c = v.dim(0);
  std::vector<double> out(static_cast<size_t>(h) * w * c);
  for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p)
    std::copy_n(v.value().data(), c, out.data() + p * c);
  Tensor o = Tensor::from({h, w, c}, std::move(out));
  auto vi = v.impl(), oi = o.impl();
  maybe_record(o, {v}, [vi, oi, h, w, c]() {
    if (!vi->requires_grad) return;
    for (size_t p = 0; p < static_cast<size_t>(h) * w; ++p)
      for (int ch = 0; ch < c; ++ch) vi->grad[ch] += oi->grad[p * c + ch];
  });
  return o;
}

namespace {

struct SpatialDims {
  int h, w, c;
  bool has_c;
};

SpatialDims spatial_dims(const Tensor& t, const char* op) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1), 1, false};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2), true};
  throw std::invalid_argument(std::string(op) + " expects [H,W] or [H,W,C]");
}

}  // namespace

Tensor resample_nearest(const Tensor& x, int out_h, int out_w) {
  auto d = spatial_dims(x, "resample_nearest");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resample_nearest: bad output size");
  std::vector<int> src_y(out_h), src_x(out_w);
  for (int y = 0; y < out_h; ++y)
    src_y[y] = std::min(d.h - 1, static_cast<int>((y + 0.5) * d.h / out_h));
  for (int xo = 0; xo < out_w; ++xo)
    src_x[xo] = std::min(d.w - 1, static_cast<int>((xo + 0.5) * d.w / out_w));
  std::vector<double> out(static_cast<size_t>(out_h) * out_w * d.c);
  for (int y = 0; y < out_h; ++y)
    for (int xo = 0; xo < out_w; ++xo) {
      const double* src = x.value().data() + (static_cast<size_t>(src_y[y]) * d.w + src_x[xo]) * d.c;
      std::copy_n(src, d.c, out.data() + (static_cast<size_t>(y) * out_w + xo) * d.c);
    }
  Shape os = d.has_c ? Shape{out_h, out_w, d.c} : Shape{out_h, out_w};
  Tensor o = Tensor::from(std::move(os), std::move(out));
  auto xi = x.impl(), oi = o.impl();
  maybe_record(o, {x}, [xi, oi, d, out_h, out_w, src_y, src_x]() {
    if (!xi->requires_grad) return;
    for (int y = 0; y < out_h; ++y)
      for (int xo = 0; xo < out_w; ++xo) {
        double* gx = xi->grad.data() + (static_cast<size_t>(src_y[y]) * d.w + src_x[xo]) * d.c;
        const double* go = oi->grad.data() + (static_cast<size_t>(y) * out_w + xo) * d.c;
        for (int ch = 0; ch < d.c; ++ch) gx[ch] += go[ch];
      }
  });
  return o;
}

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  auto d = spatial_dims(x, "upsample_bilinear");
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("upsample_bilinear: bad output size");
  struct Lerp {
    int i0, i1;
    double w0, w1;
  };
  auto make = [](int src, int dst) {
    std::vector<Lerp> v(dst);
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      s = std::max(0.0, std::min(s, static_cast<double>(src - 1)));
      int i0 = static_cast<int>(s);
      int i1 = std::min(i0 + 1, src - 1);
      double f = s - i0;
      v[i] = {i0, i1, 1.0 - f, f};
    }
    return v;
  };
  auto ly = make(d.h, out_h), lx = make(d.w, out_w);
  std::vector<double> out(static_cast<size_t>(out_h) * out_w * d.c, 0.0);
  for (int y = 0; y < out_h; ++y)
    for (int xo = 0; xo < out_w; ++xo) {
      double* orow = out.data() + (static_cast<size_t>(y) * out_w + xo) * d.c;
      for (int ch = 0; ch < d.c; ++ch) {
        const auto& a = ly[y];
        const auto& b = lx[xo];
        auto px = [&](int iy, int ix) {
          return x.value()[(static_cast<size_t>(iy) * d.w + ix) * d.c + ch];
        };
        orow[ch] = a.w0 * (b.w0 * px(a.i0, b.i0) + b.w1 * px(a.i0, b.i1)) +
                   a.w1 * (b.w0 * px(a.i1, b.i0) + b.w1 * px(a.i1, b.i1));
      }
    }
  Shape os = d.has_c ? Shape{out_h, out_w, d.c} : Shape{out_h, out_w};
  Tensor o = Tensor::from(std::move(os), std::move(out));
  auto xi = x.impl(), oi = o.impl();
  maybe_record(o, {x}, [xi, oi, d, out_h, out_w, ly, lx]() {
    if (!xi->requires_grad) return;
    for (int y = 0; y < out_h; ++y)
      for (int xo = 0; xo < out_w; ++xo) {
        const double* go = oi->grad.data() + (static_cast<size_t>(y) * out_w + xo) * d.c;
        const auto& a = ly[y];
        const auto& b = lx[xo];
        for (int ch = 0; ch < d.c; ++ch) {
          auto acc = [&](int iy, int ix, double wgt) {
            xi->grad[(static_cast<size_t>(iy) * d.w + ix) * d.c + ch] += go[ch] * wgt;
          };
          acc(a.i0, b.i0, a.w0 * b.w0);
          acc(a.i0, b.i1, a.w0 * b.w1);
          acc(a.i1, b.i0, a.w1 * b.w0);
          acc(a.i1, b.i1, a.w1 * b.w1);
        }
      }
  });
  return o;
}

GridTransform inverse_of(GridTransform t) {
  switch (t) {
    case GridTransform::kRot90:
      return GridTransform::kRot270;
    case GridTransform::kRot270:
      return GridTransform::kRot90;
    default:
      return t;  // identity, hflip, rot180 are involutions
  }
}

Tensor grid_transform(const Tensor& x, GridTransform t) {
  auto d = spatial_dims(x, "grid_transform");
  if ((t == GridTransform::kRot90 || t == GridTransform::kRot270) && d.h != d.w) {
    throw std::invalid_argument("rot90/rot270 require a square grid");
  }
  const int oh = d.h, ow = d.w;  // square enforced for the rotations that swap axes
  auto src_of = [t, d](int y, int xo, int* sy, int* sx) {
    switch (t) {
      case GridTransform::kIdentity:
        *sy = y;
        *sx = xo;
        break;
      case GridTransform::kHFlip:
        *sy = y;
        *sx = d.w - 1 - xo;
        break;
      case GridTransform::kRot90:  // output(y,x) = input(x, H-1-y): 90 deg CCW
        *sy = xo;
        *sx = d.w - 1 - y;
        break;
      case GridTransform::kRot180:
        *sy = d.h - 1 - y;
        *sx = d.w - 1 - xo;
        break;
      case GridTransform::kRot270:
        *sy = d.h - 1 - xo;
        *sx = y;
        break;
    }
  };
  std::vector<double> out(x.numel());
  for (int y = 0; y < oh; ++y)
    for (int xo = 0; xo < ow; ++xo) {
      int sy, sx;
      src_of(y, xo, &sy, &sx);
      std::copy_n(x.value().data() + (static_cast<size_t>(sy) * d.w + sx) * d.c, d.c,
                  out.data() + (static_cast<size_t>(y) * ow + xo) * d.c);
    }
  Tensor o = Tensor::from(x.shape(), std::move(out));
  auto xi = x.impl(), oi = o.impl();
  maybe_record(o, {x}, [xi, oi, d, oh, ow, src_of]() {
    if (!xi->requires_grad) return;
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo) {
        int sy, sx;
        src_of(y, xo, &sy, &sx);
        for (int ch = 0; ch < d.c; ++ch)
          xi->grad[(static_cast<size_t>(sy) * d.w + sx) * d.c + ch] +=
              oi->grad[(static_cast<size_t>(y) * ow + xo) * d.c + ch];
      }
  });
  return o;
}

// ---- fused losses ----------------------------------------------------------

Tensor soft_dice(const Tensor& pred, const Tensor& target) {
  if (!same_shape(pred.shape(), target.shape()))
    throw std::invalid_argument("soft_dice: shape mismatch");
  double inter = 0.0, sp = 0.0, st = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    inter += pred.value()[i] * target.value()[i];
    sp += pred.value()[i];
    st += target.value()[i];
  }
  const double num = 2.0 * inter + 1.0;
  const double den = sp + st + 1.0;
  Tensor o = Tensor::scalar(1.0 - num / den);
  check_finite(o.value(), "soft_dice");
  auto pi = pred.impl(), ti = target.impl(), oi = o.impl();
  maybe_record(o, {pred, target}, [pi, ti, oi, num, den]() {
    const double g = oi->grad[0];
    if (pi->requires_grad) {
      for (size_t i = 0; i < pi->value.size(); ++i)
        pi->grad[i] += g * (num - 2.0 * ti->value[i] * den) / (den * den);
    }
    if (ti->requires_grad) {
      for (size_t i = 0; i < ti->value.size(); ++i)
        ti->grad[i] += g * (num - 2.0 * pi->value[i] * den) / (den * den);
    }
  });
  return o;
}

namespace {
constexpr double kBceEps = 1e-7;
}

Tensor bce(const Tensor& pred, const Tensor& target) {
  if (!same_shape(pred.shape(), target.shape())) throw std::invalid_argument("bce: shape mismatch");
  constexpr double kEps = kBceEps;
  const double n = static_cast<double>(pred.numel());
  double acc = 0.0;
  for (size_t i = 0; i < pred.numel(); ++i) {
    const double p = std::min(1.0 - kEps, std::max(kEps, pred.value()[i]));
    const double t = target.value()[i];
    acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  Tensor o = Tensor::scalar(acc / n);
  check_finite(o.value(), "bce");
  auto pi = pred.impl(), ti = target.impl(), oi = o.impl();
  maybe_record(o, {pred, target}, [pi, ti, oi, n]() {
    const double g = oi->grad[0] / n;
    if (pi->requires_grad) {
      for (size_t i = 0; i < pi->value.size(); ++i) {
        const double praw = pi->value[i];
        if (praw <= kEps || praw >= 1.0 - kEps) continue;  // clamped region
        const double t = ti->value[i];
        pi->grad[i] += g * (-t / praw + (1.0 - t) / (1.0 - praw));
      }
    }
    if (ti->requires_grad) {
      for (size_t i = 0; i < ti->value.size(); ++i) {
        const double p = std::min(1.0 - kEps, std::max(kEps, pi->value[i]));
        ti->grad[i] += g * (std::log(1.0 - p) - std::log(p));
      }
    }
  });
  return o;
}

Tensor ce_logits(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw std::invalid_argument("ce_logits expects a rank-1 logit vector");
  const int k = logits.dim(0);
  if (label < 0 || label >= k) throw std::invalid_argument("ce_logits: label out of range");
  double mx = logits.value()[0];
  for (double v : logits.value()) mx = std::max(mx, v);
  double lse = 0.0;
  for (double v : logits.value()) lse += std::exp(v - mx);
  lse = mx + std::log(lse);
  Tensor o = Tensor::scalar(lse - logits.value()[label]);
  check_finite(o.value(), "ce_logits");
  auto li = logits.impl(), oi = o.impl();
  maybe_record(o, {logits}, [li, oi, k, label, mx, lse]() {
    if (!li->requires_grad) return;
    const double g = oi->grad[0];
    (void)mx;
    for (int i = 0; i < k; ++i) {
      const double p = std::exp(li->value[i] - lse);
      li->grad[i] += g * (p - (i == label ? 1.0 : 0.0));
    }
  });
  return o;
}

Tensor cross_entropy_probs(const Tensor& target_probs, const Tensor& probs) {
  if (!same_shape(target_probs.shape(), probs.shape()))
    throw std::invalid_argument("cross_entropy_probs: shape mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < probs.numel(); ++i) {
    const double t = target_probs.value()[i];
    if (t > 0.0) acc -= t * std::log(probs.value()[i]);
  }
  Tensor o = Tensor::scalar(acc);
  check_finite(o.value(), "cross_entropy_probs");
  auto ti = target_probs.impl(), qi = probs.impl(), oi = o.impl();
  maybe_record(o, {target_probs, probs}, [ti, qi, oi]() {
    const double g = oi->grad[0];
    if (qi->requires_grad) {
      for (size_t i = 0; i < qi->value.size(); ++i) {
        if (ti->value[i] > 0.0) qi->grad[i] -= g * ti->value[i] / qi->value[i];
      }
    }
    if (ti->requires_grad) {
      for (size_t i = 0; i < ti->value.size(); ++i) ti->grad[i] -= g * std::log(qi->value[i]);
    }
  });
  return o;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor bernoulli_kl_mean(const Tensor& teacher_logits, const Tensor& student_logits,
                         double temperature) {
  if (!same_shape(teacher_logits.shape(), student_logits.shape()))
    throw std::invalid_argument("bernoulli_kl_mean: shape mismatch");
  if (temperature <= 0.0) throw std::invalid_argument("bernoulli_kl_mean: temperature must be positive");
  const double n = static_cast<double>(teacher_logits.numel());
  double acc = 0.0;
  for (size_t i = 0; i < teacher_logits.numel(); ++i) {
    const double a = teacher_logits.value()[i] / temperature;
    const double b = student_logits.value()[i] / temperature;
    const double p = stable_sigmoid(a);
    // KL(Ber(p) || Ber(q)) written in softplus form; exact and stable for
    // arbitrarily large logits.
    acc += p * (softplus(-b) - softplus(-a)) + (1.0 - p) * (softplus(b) - softplus(a));
  }
  Tensor o = Tensor::scalar(acc / n);
  check_finite(o.value(), "bernoulli_kl_mean");
  auto ai = teacher_logits.impl(), bi = student_logits.impl(), oi = o.impl();
  maybe_record(o, {teacher_logits, student_logits}, [ai, bi, oi, temperature, n]() {
    const double g = oi->grad[0] / n;
    for (size_t i = 0; i < ai->value.size(); ++i) {
      const double a = ai->value[i] / temperature;
      const double b = bi->value[i] / temperature;
      const double p = stable_sigmoid(a);
      const double q = stable_sigmoid(b);
      if (bi->requires_grad) bi->grad[i] += g * (q - p) / temperature;
      if (ai->requires_grad) ai->grad[i] += g * p * (1.0 - p) * (a - b) / temperature;
    }
  });
  return o;
}

// ---- random init -----------------------------------------------------------

Tensor randn(Shape shape, Rng& rng, double stddev) {
  size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  size_t n = shape_numel(shape);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace slick
