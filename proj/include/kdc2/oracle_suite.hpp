#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kdc2 {

struct OracleSuiteOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 0;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t batch = 2;
  std::size_t channels = 4;  // uses the grid-demo-4 montage
  std::size_t representation = 8;
  std::size_t augmentations = 3;
};

struct OracleCheckResult {
  std::string name;
  std::size_t instances = 0;
  /// Instances redrawn because a finite-difference probe crossed a relu or
  /// max-pool kink.
  std::size_t resampled = 0;
  std::size_t gradients_checked = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Central-difference checks of every loss and both encoders on random
/// instances. Each check covers all of its inputs and parameters.
std::vector<OracleCheckResult> run_oracle_suite(const OracleSuiteOptions& options = {});

/// Names of the checks in run order.
std::vector<std::string> oracle_check_names();

}  // namespace kdc2
