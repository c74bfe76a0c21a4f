#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kdc2/training.hpp"

namespace kdc2 {

/// One JSON object, keys in fixed order:
/// phase, epoch, loss_inner, loss_cross, loss_pt, loss_ce, loss_total,
/// sigma_s, sigma_t, sigma_pt, sigma_ce, [train_acc], [accuracy], seconds,
/// seed, label_fraction. `seconds` is null when timings are off.
std::string to_json_line(const EpochRecord& record);

EpochRecord parse_metrics_line(std::string_view line);

/// Blank lines are skipped. Errors carry the line number and byte offset.
std::vector<EpochRecord> parse_metrics(std::string_view text, const std::string& source);
std::vector<EpochRecord> read_metrics(const std::string& path);

/// Line-buffered JSON-lines sink.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path, bool append = false);
  void write(const EpochRecord& record);

 private:
  std::string path_;
  std::ofstream out_;
};

/// Final record of one (phase, fraction, seed) run.
struct ReportRow {
  std::string phase;
  std::string seed;  // "median" on aggregate rows
  double fraction = 1.0;
  std::size_t epoch = 0;
  double loss_total = 0.0;
  std::optional<double> accuracy;  // held-out accuracy if present, else training accuracy
};

struct Report {
  std::vector<ReportRow> rows;  // per-run rows, then one median row per multi-seed group
  bool multi_seed = false;
  std::string text;
  std::string csv;  // phase,seed,fraction,epoch,loss_total,accuracy
};

Report build_report(const std::vector<EpochRecord>& records);

/// Shortest text that reads back to the same double.
std::string format_number(double v);

}  // namespace kdc2
