#pragma once

#include <functional>
#include <vector>

#include "kdc2/autodiff.hpp"

namespace kdc2 {

/// Builds a scalar loss on `tape` from the variable bound to the checked input.
using ScalarFunction = std::function<Var(Tape& tape, Var x)>;

struct GradCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  /// Smallest relu / max-pool kink margin seen while building the analytic graph.
  double kink_margin = 0.0;
  /// Elements whose +/- probes took a different relu / max-pool branch than the
  /// base point. Their numeric derivative straddles a kink and is meaningless.
  std::size_t branch_changes = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
};

/// Compares reverse-mode gradients of `f` at `x` with central differences
/// (f(x + h e_i) - f(x - h e_i)) / 2h for every element of `x`.
///
/// Throws ContractError for a step outside (0, 1e-2] and OracleError when two
/// evaluations of `f` at the same point disagree.
GradCheckReport grad_check(const ScalarFunction& f, const Tensor& x, const GradCheckOptions& options = {});

inline GradCheckReport grad_check(const ScalarFunction& f, const Tensor& x, double step, double tolerance) {
  GradCheckOptions options;
  options.step = step;
  options.tolerance = tolerance;
  return grad_check(f, x, options);
}

/// Relative error used by grad_check.
double relative_error(double analytic, double numeric, double abs_floor = 1e-6);

}  // namespace kdc2
