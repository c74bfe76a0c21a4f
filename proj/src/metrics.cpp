#include "kdc2/metrics.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "kdc2/errors.hpp"

namespace kdc2 {
namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

double number_field(const nlohmann::json& j, const char* key, bool required = true, double fallback = 0.0) {
  if (!j.contains(key) || j[key].is_null()) {
    if (required) throw ValidationError(std::string("missing field '") + key + "'");
    return fallback;
  }
  if (!j[key].is_number()) throw ValidationError(std::string("field '") + key + "' is not a number");
  return j[key].get<double>();
}

std::optional<double> optional_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return number_field(j, key);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string("-"); }

}  // namespace

std::string format_number(double v) { return nlohmann::json(v).dump(); }

std::string to_json_line(const EpochRecord& r) {
  ordered_json j;
  j["phase"] = r.phase;
  j["epoch"] = r.epoch;
  j["loss_inner"] = r.loss_inner;
  j["loss_cross"] = r.loss_cross;
  j["loss_pt"] = r.loss_pt;
  j["loss_ce"] = r.loss_ce;
  j["loss_total"] = r.loss_total;
  j["sigma_s"] = r.sigma_s;
  j["sigma_t"] = r.sigma_t;
  j["sigma_pt"] = r.sigma_pt;
  j["sigma_ce"] = r.sigma_ce;
  if (r.train_acc) j["train_acc"] = *r.train_acc;
  if (r.accuracy) j["accuracy"] = *r.accuracy;
  j["seconds"] = optional_number(r.seconds);
  j["seed"] = r.seed;
  j["label_fraction"] = r.label_fraction;
  return j.dump();
}

EpochRecord parse_metrics_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!j.is_object()) throw ValidationError("metrics line is not a JSON object");
  EpochRecord r;
  if (!j.contains("phase") || !j["phase"].is_string()) throw ValidationError("missing string field 'phase'");
  r.phase = j["phase"].get<std::string>();
  const double epoch = number_field(j, "epoch");
  if (epoch < 0) throw ValidationError("negative epoch");
  r.epoch = static_cast<std::size_t>(epoch);
  r.loss_inner = number_field(j, "loss_inner", false);
  r.loss_cross = number_field(j, "loss_cross", false);
  r.loss_pt = number_field(j, "loss_pt", false);
  r.loss_ce = number_field(j, "loss_ce", false);
  r.loss_total = number_field(j, "loss_total");
  r.sigma_s = number_field(j, "sigma_s", false, 1.0);
  r.sigma_t = number_field(j, "sigma_t", false, 1.0);
  r.sigma_pt = number_field(j, "sigma_pt", false, 1.0);
  r.sigma_ce = number_field(j, "sigma_ce", false, 1.0);
  r.train_acc = optional_field(j, "train_acc");
  r.accuracy = optional_field(j, "accuracy");
  r.seconds = optional_field(j, "seconds");
  if (j.contains("seed") && j["seed"].is_number_unsigned()) r.seed = j["seed"].get<std::uint64_t>();
  r.label_fraction = number_field(j, "label_fraction", false, 1.0);
  return r;
}

std::vector<EpochRecord> parse_metrics(std::string_view text, const std::string& source) {
  std::vector<EpochRecord> out;
  std::size_t offset = 0, line_no = 0;
  while (offset < text.size()) {
    const std::size_t end = std::min(text.find('\n', offset), text.size());
    const std::string_view line = text.substr(offset, end - offset);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        out.push_back(parse_metrics_line(line));
      } catch (const ParseError& e) {
        throw ParseError(source + ": line " + std::to_string(line_no) + ": " + e.what(), offset + e.offset());
      } catch (const ValidationError& e) {
        throw ParseError(source + ": line " + std::to_string(line_no) + ": " + e.what(), offset);
      }
    }
    offset = end + 1;
  }
  return out;
}

std::vector<EpochRecord> read_metrics(const std::string& path) { return parse_metrics(detail::read_file(path), path); }

MetricsWriter::MetricsWriter(const std::string& path, bool append)
    : path_(path), out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw Error("cannot write metrics to '" + path + "'");
}

void MetricsWriter::write(const EpochRecord& record) {
  out_ << to_json_line(record) << '\n';
  out_.flush();
  if (!out_) throw Error("short write to '" + path_ + "'");
}

Report build_report(const std::vector<EpochRecord>& records) {
  if (records.empty()) throw ValidationError("report: no metrics records");
  struct Key {
    std::string phase;
    double fraction;
    auto operator<=>(const Key&) const = default;
  };
  // Per group, per seed: the record with the highest epoch (later lines win ties).
  std::map<Key, std::map<std::uint64_t, EpochRecord>> groups;
  for (const auto& r : records) {
    auto& slot = groups[{r.phase, r.label_fraction}];
    auto it = slot.find(r.seed);
    if (it == slot.end() || r.epoch >= it->second.epoch) slot[r.seed] = r;
  }

  Report rep;
  for (const auto& [key, seeds] : groups) rep.multi_seed = rep.multi_seed || seeds.size() > 1;
  std::ostringstream text, csv;
  csv << "phase,seed,fraction,epoch,loss_total,accuracy\n";
  text << "phase\tfraction\tseed\tepoch\tloss_total\taccuracy";
  if (rep.multi_seed) text << "\tmedian_loss_total\tmedian_accuracy";
  text << '\n';
  std::vector<ReportRow> medians;
  for (const auto& [key, seeds] : groups) {
    std::vector<double> losses, accs;
    std::vector<ReportRow> rows;
    for (const auto& [seed, r] : seeds) {
      ReportRow row{r.phase, std::to_string(seed), r.label_fraction, r.epoch, r.loss_total,
                    r.accuracy ? r.accuracy : r.train_acc};
      losses.push_back(row.loss_total);
      if (row.accuracy) accs.push_back(*row.accuracy);
      rows.push_back(row);
    }
    std::optional<ReportRow> med;
    if (seeds.size() > 1) {
      ReportRow m{key.phase, "median", key.fraction, rows.back().epoch, median(losses), std::nullopt};
      if (accs.size() == rows.size()) m.accuracy = median(accs);
      med = m;
      medians.push_back(m);
    }
    for (const auto& row : rows) {
      text << row.phase << '\t' << format_number(row.fraction) << '\t' << row.seed << '\t' << row.epoch << '\t'
           << format_number(row.loss_total) << '\t' << cell(row.accuracy);
      if (rep.multi_seed) {
        text << '\t' << (med ? format_number(med->loss_total) : "-") << '\t' << (med ? cell(med->accuracy) : "-");
      }
      text << '\n';
      csv << row.phase << ',' << row.seed << ',' << format_number(row.fraction) << ',' << row.epoch << ','
          << format_number(row.loss_total) << ',' << (row.accuracy ? format_number(*row.accuracy) : "") << '\n';
      rep.rows.push_back(row);
    }
  }
  for (const auto& m : medians) {
    csv << m.phase << ",median," << format_number(m.fraction) << ',' << m.epoch << ',' << format_number(m.loss_total)
        << ',' << (m.accuracy ? format_number(*m.accuracy) : "") << '\n';
    rep.rows.push_back(m);
  }
  rep.text = text.str();
  rep.csv = csv.str();
  return rep;
}

}  // namespace kdc2
