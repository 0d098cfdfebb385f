#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lgr/autograd.hpp"

namespace lgr {

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every coordinate; otherwise an evenly strided subset of this size.
  std::size_t max_coords_per_input = 0;
};

struct GradCheckReport {
  std::vector<double> max_rel_err;  // per input
  double worst = 0.0;
  std::size_t coords_checked = 0;
  // Largest analytic gradient among checked coordinates; the relative error is
  // only informative when this is not tiny.
  double max_abs_grad = 0.0;
  // Coordinates whose +/-eps probes flipped a relu sign and were therefore skipped.
  std::size_t coords_skipped = 0;
};

/// Compares reverse-mode gradients of f against central differences.
/// Relative error is |a - n| / max(1, |a|, |n|). Inputs with requires_grad
/// unset are passed through and not checked.
GradCheckReport finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& opts = {});

}  // namespace lgr
