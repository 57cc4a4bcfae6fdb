#pragma once

#include <functional>

#include "s3mot/tensor.hpp"

namespace s3mot {

// Max over coordinates of |analytic - central difference| scaled by
// max(1, |analytic|, |numeric|). Throws NonFiniteValue if f produces a
// non-finite scalar anywhere along the way.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double h = 1e-5);

}  // namespace s3mot
