#pragma once

#include <functional>
#include <vector>

#include "giv/tensor.hpp"

namespace giv::ag {

// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8)
// for a scalar-valued f evaluated at `point`. step must lie in [1e-4, 1e-2].
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  float step);

// Same measure over every coordinate of every tensor in `params`; `loss`
// closes over them. Parameter values are perturbed in place and restored.
double grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                         float step);

}  // namespace giv::ag
