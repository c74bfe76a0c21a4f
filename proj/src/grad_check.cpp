#include "kdc2/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kdc2/errors.hpp"

namespace kdc2 {
namespace {

struct Evaluation {
  double value;
  std::uint64_t branches;
};

Evaluation evaluate(const ScalarFunction& f, const Tensor& x) {
  Tape tape;
  tape.trace_branches(true);
  Var loss = f(tape, tape.constant(x));
  if (loss.value().size() != 1) {
    throw ContractError("grad_check: function must be scalar-valued, got shape " + to_string(loss.shape()));
  }
  return {loss.value()[0], tape.branch_signature()};
}

}  // namespace

double relative_error(double analytic, double numeric, double abs_floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport grad_check(const ScalarFunction& f, const Tensor& x, const GradCheckOptions& options) {
  if (!(options.step > 0.0 && options.step <= 1e-2)) {
    throw ContractError("grad_check: step must lie in (0, 1e-2], got " + std::to_string(options.step));
  }

  GradCheckReport report;
  report.tolerance = options.tolerance;

  Tape tape;
  Var input = tape.leaf(x);
  Var loss = f(tape, input);
  tape.backward(loss);
  const Tensor analytic = tape.grad(input);
  report.kink_margin = tape.kink_margin();

  const double base = loss.value()[0];
  const Evaluation again = evaluate(f, x);
  if (base != again.value) {
    throw OracleError("grad_check: function is not deterministic (" + std::to_string(base) + " vs " +
                      std::to_string(again.value) + ")");
  }

  Tensor probe = x;
  report.analytic.assign(analytic.values().begin(), analytic.values().end());
  report.numeric.resize(x.size());
  report.rel_error.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + options.step;
    const Evaluation plus = evaluate(f, probe);
    probe[i] = original - options.step;
    const Evaluation minus = evaluate(f, probe);
    probe[i] = original;
    if (plus.branches != again.branches || minus.branches != again.branches) ++report.branch_changes;
    report.numeric[i] = (plus.value - minus.value) / (2.0 * options.step);
    report.rel_error[i] = relative_error(report.analytic[i], report.numeric[i], options.abs_floor);
    report.max_rel_error = std::max(report.max_rel_error, report.rel_error[i]);
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace kdc2
