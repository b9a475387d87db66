#include "giv/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "giv/error.hpp"

namespace giv::ag {

namespace {

void check_step(float step) {
  if (!(step >= 1e-4f && step <= 1e-2f)) {
    throw ContractError("grad_check: step must lie in [1e-4, 1e-2]");
  }
}

double relative_error(double analytic, double central) {
  const double denom = std::max({std::abs(analytic), std::abs(central), 1e-8});
  return std::abs(analytic - central) / denom;
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  float step) {
  Tensor x(point.shape(), std::vector<float>(point.data().begin(), point.data().end()), true);
  return grad_check_params([&] { return f(x); }, {x}, step);
}

double grad_check_params(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                         float step) {
  check_step(step);
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  double worst = 0.0;
  WideScope wide;
  for (auto& p : params) {
    std::vector<float> analytic(p.grad().begin(), p.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(p.numel()), 0.0f);
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float original = values[i];
      // Divide by the perturbation actually representable in f32.
      const float hi = original + step;
      const float lo = original - step;
      values[i] = hi;
      const double up = loss().wide_item();
      values[i] = lo;
      const double down = loss().wide_item();
      values[i] = original;
      const double central = (up - down) / (static_cast<double>(hi) - lo);
      worst = std::max(worst, relative_error(analytic[i], central));
    }
    p.zero_grad();
  }
  return worst;
}

}  // namespace giv::ag
