#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "slick/rng.hpp"

namespace slick {

using Shape = std::vector<int>;

class Tape;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily when the tensor joins a tape
  bool requires_grad = false;
  Tape* tape = nullptr;  // tape that recorded this tensor, if any
  int node_id = -1;      // creation-order index on that tape
};
}  // namespace detail

// Dense row-major f64 tensor.  Value semantics on the handle, shared storage
// underneath; storage is immutable after creation except for gradient
// accumulation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  // Leaf with requires_grad set; the usual way to create parameters.
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return impl_->value.size(); }

  const std::vector<double>& value() const { return impl_->value; }
  std::vector<double>& mutable_value() { return impl_->value; }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  bool has_grad() const { return !impl_->grad.empty(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);
  void zero_grad();

  double item() const;  // scalar tensors only
  double at(const std::vector<int>& idx) const;

  // Deep copy of values; the copy is a fresh leaf (no tape, no grad).
  Tensor clone() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape.  Constructing a Tape makes it the active tape for the
// current thread (stack discipline); ops record themselves while one is
// active and any input requires gradients.  Distinct tapes on distinct
// threads share nothing.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Propagates d(loss)/d(node) to every recorded tensor, visiting nodes in
  // reverse creation order exactly once.  Gradients accumulate additively.
  void backward(const Tensor& loss);

  size_t size() const { return nodes_.size(); }

  static Tape* active();

  // Registers an op output with its pullback.  `parents` lists the inputs
  // whose gradients the pullback writes; used for validity checks.
  void record(const Tensor& out,
              std::vector<std::shared_ptr<detail::TensorImpl>> parents,
              std::function<void()> pullback);

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl> out;
    std::vector<std::shared_ptr<detail::TensorImpl>> parents;
    std::function<void()> pullback;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

// Evaluation guard: disables recording in scope even when a tape is active.
// Frozen-teacher inference and metric computation run under this.
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  static bool active();

 private:
  bool prev_;
};

// ---- op vocabulary ---------------------------------------------------------
// Fixed set backing every block and loss.  All ops validate shapes, reject
// non-finite outputs, and register pullbacks when grads are required.

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor recip(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
// a * s where s is a one-element tensor (both sides differentiable)
Tensor mul_scalar_t(const Tensor& a, const Tensor& s);

// linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// shape
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& a, int from, int to);
Tensor row(const Tensor& a, int i);  // [m,n] -> [n]

// nonlinear reductions / maps
Tensor softmax(const Tensor& a, double temperature = 1.0);  // last axis
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor l1_norm(const Tensor& a);
Tensor l2_norm_sq(const Tensor& a);
Tensor l2_norm(const Tensor& a);

// spatial ops on [H,W,C] (and [H,W] where noted)
enum class Padding { kSame, kValid };
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias = Tensor(),
              int stride = 1, Padding padding = Padding::kSame);
Tensor avg_pool2(const Tensor& x);                   // 2x2, ceil semantics
Tensor channel_mean(const Tensor& x);                // [H,W,C] -> [C] (GAP)
Tensor broadcast_c(const Tensor& v, int h, int w);   // [C] -> [H,W,C]
Tensor resample_nearest(const Tensor& x, int out_h, int out_w);  // [H,W] or [H,W,C]
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);  // [H,W] or [H,W,C]

// grid transforms on [H,W] or [H,W,C]
enum class GridTransform { kIdentity, kHFlip, kRot90, kRot180, kRot270 };
Tensor grid_transform(const Tensor& x, GridTransform t);
GridTransform inverse_of(GridTransform t);

// fused losses (targets may be plain constants; both sides get pullbacks
// where the math allows)
Tensor soft_dice(const Tensor& pred, const Tensor& target);  // 1 - (2*sum(pt)+1)/(sum p + sum t + 1)
Tensor bce(const Tensor& pred, const Tensor& target);        // probs clamped to [1e-7, 1-1e-7]
Tensor ce_logits(const Tensor& logits, int label);           // logsumexp(z) - z[label]
Tensor cross_entropy_probs(const Tensor& target_probs, const Tensor& probs);  // -sum t*log(q)
// mean over elements of KL(sigma(a/tau) || sigma(b/tau)), per-element Bernoulli
Tensor bernoulli_kl_mean(const Tensor& teacher_logits, const Tensor& student_logits,
                         double temperature);

// helpers
Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);
size_t shape_numel(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);
std::string shape_str(const Shape& s);

}  // namespace slick
