#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lgr/gradcheck.hpp"

namespace lgr {

/// Result of checking one differentiable operation for one seed.
struct GradientCase {
  std::string op;
  std::uint64_t seed = 0;
  GradCheckReport report;
  std::size_t attempts = 0;  // instances drawn until one had a non-vanishing gradient
};

/// Smallest largest-gradient magnitude for an instance to count as informative.
inline constexpr double kMinGradient = 0.05;

/// Names of the operations covered by run_gradient_suite, in run order.
std::vector<std::string> gradient_suite_ops();

/// Finite-difference checks of every differentiable building block of the
/// model on small random instances (fld8 hierarchy). Each output is reduced to
/// a scalar through a random projection so no gradient direction cancels.
/// An empty `ops` selects all of them; unknown names raise ArgumentError.
std::vector<GradientCase> run_gradient_suite(const std::vector<std::uint64_t>& seeds,
                                             const std::vector<std::string>& ops = {});

}  // namespace lgr
