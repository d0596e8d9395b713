#pragma once

#include <cmath>
#include <functional>

#include "slick/tensor.hpp"

namespace slick {

// Central finite-difference check of d f(x) / dx against the tape gradient.
// Returns the worst per-element error, relative above magnitude 1 and
// absolute below it.  `f` must be a pure function of x's values.
inline double max_rel_grad_error(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                 double h = 1e-5) {
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor y = f(x);
    tape.backward(y);
    analytic = x.grad();
  }
  double worst = 0.0;
  auto& vals = x.mutable_value();
  for (size_t i = 0; i < vals.size(); ++i) {
    const double keep = vals[i];
    vals[i] = keep + h;
    const double up = f(x).item();
    vals[i] = keep - h;
    const double down = f(x).item();
    vals[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double err = std::fabs(analytic[i] - fd) /
                       std::max({1.0, std::fabs(analytic[i]), std::fabs(fd)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace slick
