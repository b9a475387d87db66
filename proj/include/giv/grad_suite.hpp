#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace giv {

struct GradCheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return error < tolerance; }
};

// Every differentiable primitive, each reduced to a scalar through a fixed
// random weighting so no gradient is identically zero.
std::vector<GradCheckResult> primitive_grad_checks(std::uint64_t seed);

// Diffusion training loss of a small expanded model (width 8) with respect
// to all of its parameters, evaluated at a random parameter point.
GradCheckResult model_grad_check(std::uint64_t seed, std::int64_t depth = 1);

// The same loss with respect to the model's input tokens.
GradCheckResult model_input_grad_check(std::uint64_t seed, std::int64_t depth = 1);

}  // namespace giv
