#include "lgr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lgr/errors.hpp"

namespace lgr {
namespace {

struct Evaluation {
  double value = 0.0;
  std::vector<bool> relu_signs;
};

Evaluation evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  tape.set_track_relu(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  Var out = f(tape, vars);
  if (out.value().size() != 1) {
    throw ArgumentError("finite_diff_check: function must be scalar-valued, got " +
                        shape_str(out.shape()));
  }
  return {out.value()[0], tape.relu_signs()};
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                  const GradCheckOptions& opts) {
  if (!(opts.eps > 0.0)) throw ArgumentError("finite_diff_check: eps must be positive");

  Tape tape;
  tape.set_track_relu(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var out = f(tape, vars);
  if (out.value().size() != 1) {
    throw ArgumentError("finite_diff_check: function must be scalar-valued, got " +
                        shape_str(out.shape()));
  }
  const std::vector<bool> base_signs = tape.relu_signs();
  Gradients grads = tape.backward(out);

  GradCheckReport report;
  report.max_rel_err.assign(inputs.size(), 0.0);
  std::vector<Tensor> probe = inputs;

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    const Tensor& analytic = grads[vars[k]];
    const std::size_t n = inputs[k].size();
    const std::size_t stride =
        opts.max_coords_per_input == 0 || n <= opts.max_coords_per_input
            ? 1
            : (n + opts.max_coords_per_input - 1) / opts.max_coords_per_input;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = inputs[k][i];
      probe[k][i] = orig + opts.eps;
      const Evaluation plus = evaluate(f, probe);
      probe[k][i] = orig - opts.eps;
      const Evaluation minus = evaluate(f, probe);
      probe[k][i] = orig;
      if (plus.relu_signs != base_signs || minus.relu_signs != base_signs) {
        ++report.coords_skipped;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opts.eps);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      report.max_rel_err[k] = std::max(report.max_rel_err[k], rel);
      report.max_abs_grad = std::max(report.max_abs_grad, std::abs(a));
      ++report.coords_checked;
    }
    report.worst = std::max(report.worst, report.max_rel_err[k]);
  }
  return report;
}

}  // namespace lgr
