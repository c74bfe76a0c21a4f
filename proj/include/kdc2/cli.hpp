#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "kdc2/datasets.hpp"
#include "kdc2/training.hpp"
#include "kdc2/views.hpp"

namespace kdc2 {

/// Everything a command needs to rerun. Stored as run_config.json next to
/// every artifact; `--config` reads it back.
struct RunConfig {
  std::string command;
  TrainConfig train;
  std::string data;
  std::string test;
  std::string init;
  std::string out;
  std::string montage;  // empty: the dataset's own montage
  Neighborhood neighborhood = Neighborhood::four;
  std::vector<double> fractions = {0.75, 0.5, 0.25, 0.01};
  SynthSpec synth;
  double test_frac = 0.2;
  std::size_t oracle_instances = 20;
};

std::string run_config_to_json(const RunConfig& config);

/// Overlays the keys present in `text` onto `base`. Unknown keys are errors.
RunConfig run_config_from_json(std::string_view text, RunConfig base);

/// Exit codes: 0 success, 1 usage or validation error, 2 runtime error.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kdc2
