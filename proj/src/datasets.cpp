#include "kdc2/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <filesystem>
#include <random>

#include <json.hpp>

#include "binary_io.hpp"
#include "kdc2/augment.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/params.hpp"
#include "kdc2/views.hpp"

namespace kdc2 {
namespace {

enum : std::uint32_t { kSynthStream = 11, kSplitStream = 12 };

Rng stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return Rng(seq);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

void LabeledDataset::validate() const {
  if (labels.size() != slices.size()) {
    throw ValidationError("dataset: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(slices.size()) + " slices");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes()) {
      throw ValidationError("dataset: label " + std::to_string(labels[i]) + " at slice " + std::to_string(i) +
                            " outside [0, " + std::to_string(n_classes()) + ")");
    }
  }
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (slices[i].samples.rank() != 2 || slices[i].channels() != channel_names.size()) {
      throw DimensionError("dataset: slice " + std::to_string(i) + " has shape " +
                           to_string(slices[i].samples.shape()) + " for " + std::to_string(channel_names.size()) +
                           " channels");
    }
  }
}

std::string encode_recording(const Recording& rec) {
  rec.validate();
  detail::ByteWriter w;
  w.raw("KREC", 4);
  w.u32(kRecordingVersion);
  w.u32(static_cast<std::uint32_t>(rec.channels()));
  w.u64(rec.length());
  w.f64(rec.sample_rate_hz);
  for (const auto& name : rec.channel_names) w.str(name);
  for (double v : rec.samples.values()) w.f64(v);
  return w.take();
}

Recording decode_recording(const std::string& bytes) {
  detail::ByteReader r(bytes, "recording");
  if (r.bytes(4, "magic") != "KREC") r.fail("bad magic, expected 'KREC'", 0);
  const auto version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kRecordingVersion) r.fail("unsupported format version " + std::to_string(version), version_at);
  const auto c_at = r.offset();
  const std::uint32_t c = r.u32("channel count");
  if (c == 0) r.fail("zero channels", c_at);
  const auto t_at = r.offset();
  const std::uint64_t T = r.u64("sample count");
  const auto fs_at = r.offset();
  const double fs = r.f64("sample rate");
  if (!(fs > 0.0) || !std::isfinite(fs)) r.fail("sample rate must be positive", fs_at);

  Recording rec;
  rec.sample_rate_hz = fs;
  for (std::uint32_t i = 0; i < c; ++i) rec.channel_names.push_back(r.str("channel name"));
  if (T > r.remaining() / 8 / c) {
    r.fail("payload of " + std::to_string(c) + " x " + std::to_string(T) + " samples exceeds file size", t_at);
  }
  const std::size_t n = static_cast<std::size_t>(c) * T;
  r.need(n * 8, "samples");
  std::vector<double> values(n);
  for (auto& v : values) v = r.f64("sample");
  if (!r.done()) r.fail(std::to_string(r.remaining()) + " trailing bytes", r.offset());
  rec.samples = Tensor({c, static_cast<std::size_t>(T)}, std::move(values));
  try {
    rec.validate();
  } catch (const Error& e) {
    r.fail(e.what(), 0);
  }
  return rec;
}

void write_recording(const std::string& path, const Recording& recording) {
  detail::write_file(path, encode_recording(recording));
}

Recording read_recording(const std::string& path) { return decode_recording(detail::read_file(path)); }

std::vector<int> parse_labels_csv(std::string_view text) {
  std::vector<std::pair<std::size_t, int>> rows;
  std::size_t line_no = 0, offset = 0;
  bool first = true;
  while (offset <= text.size()) {
    const std::size_t end = std::min(text.find('\n', offset), text.size());
    std::string_view line = trim(text.substr(offset, end - offset));
    const std::size_t line_at = offset;
    offset = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const bool header = first && line == "slice_index,label";
    first = false;
    if (header) continue;
    const auto comma = line.find(',');
    std::size_t index = 0;
    int label = 0;
    if (comma == std::string_view::npos || !parse_number(line.substr(0, comma), index) ||
        !parse_number(line.substr(comma + 1), label)) {
      throw ParseError("labels: line " + std::to_string(line_no) + ": expected 'slice_index,label', got '" +
                           std::string(line) + "'",
                       line_at);
    }
    if (label < 0) throw ParseError("labels: line " + std::to_string(line_no) + ": negative label", line_at);
    rows.emplace_back(index, label);
  }
  std::vector<int> labels(rows.size(), -1);
  for (const auto& [index, label] : rows) {
    if (index >= rows.size()) {
      throw ValidationError("labels: slice_index " + std::to_string(index) + " out of range for " +
                            std::to_string(rows.size()) + " rows");
    }
    if (labels[index] != -1) throw ValidationError("labels: slice_index " + std::to_string(index) + " repeated");
    labels[index] = label;
  }
  return labels;
}

std::string format_labels_csv(std::span<const int> labels) {
  std::string out = "slice_index,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out += std::to_string(i) + "," + std::to_string(labels[i]) + "\n";
  return out;
}

std::vector<int> read_labels(const std::string& path) { return parse_labels_csv(detail::read_file(path)); }

void write_labels(const std::string& path, std::span<const int> labels) {
  detail::write_file(path, format_labels_csv(labels));
}

std::vector<std::string> synth_channel_names(std::size_t c) {
  const Montage grid = default_montage("tengrid-62");
  if (c == 0 || c > grid.channels()) {
    throw ValidationError("synth: channel count must lie in [1, " + std::to_string(grid.channels()) + "], got " +
                          std::to_string(c));
  }
  std::vector<Electrode> e = grid.electrodes();
  const auto dist = [](const Electrode& a) {
    const double dr = static_cast<double>(a.row) - 4.0, dc = static_cast<double>(a.col) - 4.0;
    return dr * dr + dc * dc;
  };
  std::stable_sort(e.begin(), e.end(), [&](const Electrode& a, const Electrode& b) {
    if (dist(a) != dist(b)) return dist(a) < dist(b);
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < c; ++i) out.push_back(e[i].name);
  return out;
}

double band_center_hz(std::size_t band) {
  if (band >= kBandCount) throw ValidationError("band index " + std::to_string(band) + " outside 0..4");
  return 0.5 * (kBands[band].lo_hz + kBands[band].hi_hz);
}

SynthSpec SynthSpec::with_defaults() const {
  static constexpr std::size_t kDefaultBands[kBandCount] = {2, 3, 1, 4, 0};
  SynthSpec s = *this;
  if (s.boosted_band.empty()) {
    for (std::size_t k = 0; k < n_classes; ++k) s.boosted_band.push_back(kDefaultBands[k % kBandCount]);
  }
  if (s.boosted_channels.empty() && n_classes > 0) {
    s.boosted_channels.resize(n_classes);
    for (std::size_t i = 0; i < channels; ++i) s.boosted_channels[i % n_classes].push_back(i);
  }
  if (s.channel_names.empty()) s.channel_names = synth_channel_names(channels);
  return s;
}

void SynthSpec::validate() const {
  if (n_classes == 0) throw ValidationError("synth: need at least one class");
  if (channels == 0) throw ValidationError("synth: need at least one channel");
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) throw ValidationError("synth: bad sample rate");
  if (!(window_s > 0.0) || !std::isfinite(window_s)) throw ValidationError("synth: bad window length");
  if (samples_per_class == 0) throw ValidationError("synth: samples_per_class must be positive");
  if (!(snr >= 0.0) || !std::isfinite(snr)) throw ValidationError("synth: snr must be non-negative");
  if (boosted_band.size() != n_classes || boosted_channels.size() != n_classes) {
    throw ValidationError("synth: need one boosted band and channel subset per class");
  }
  if (channel_names.size() != channels) {
    throw ValidationError("synth: " + std::to_string(channel_names.size()) + " names for " +
                          std::to_string(channels) + " channels");
  }
  for (std::size_t k = 0; k < n_classes; ++k) {
    if (boosted_band[k] >= kBandCount) {
      throw ValidationError("synth: class " + std::to_string(k) + " boosts band " + std::to_string(boosted_band[k]) +
                            " (valid 0..4)");
    }
    if (2.0 * band_center_hz(boosted_band[k]) >= sample_rate_hz) {
      throw ValidationError("synth: band " + std::string(kBandNames[boosted_band[k]]) + " center is above Nyquist");
    }
    for (auto ch : boosted_channels[k]) {
      if (ch >= channels) {
        throw ValidationError("synth: class " + std::to_string(k) + " boosts channel " + std::to_string(ch) +
                              " of " + std::to_string(channels));
      }
    }
  }
}

LabeledDataset synth_generate(const SynthSpec& spec_in) {
  const SynthSpec spec = spec_in.with_defaults();
  spec.validate();
  const auto t = static_cast<std::size_t>(std::llround(spec.window_s * spec.sample_rate_hz));
  if (t < 4) throw ValidationError("synth: window holds fewer than 4 samples");
  const std::size_t c = spec.channels;
  const std::size_t total = spec.n_classes * spec.samples_per_class;

  LabeledDataset ds;
  ds.channel_names = spec.channel_names;
  for (std::size_t k = 0; k < spec.n_classes; ++k) ds.class_names.push_back("class" + std::to_string(k));
  Rng rng = stream(spec.seed, kSynthStream);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t k = i % spec.n_classes;
    Tensor x({c, t});
    for (auto& v : x.values()) v = noise(rng);
    const double phi = phase(rng);
    const double w = 2.0 * std::numbers::pi * band_center_hz(spec.boosted_band[k]) / spec.sample_rate_hz;
    for (auto ch : spec.boosted_channels[k]) {
      for (std::size_t j = 0; j < t; ++j) x[ch * t + j] += spec.snr * std::sin(w * static_cast<double>(j) + phi);
    }
    ds.slices.push_back({std::move(x), spec.sample_rate_hz, i * t});
    ds.labels.push_back(static_cast<int>(k));
  }
  return ds;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double test_frac, std::uint64_t seed) {
  ds.validate();
  if (!(test_frac > 0.0 && test_frac < 1.0)) {
    throw ValidationError("split: test_frac must lie in (0, 1), got " + std::to_string(test_frac));
  }
  std::vector<std::vector<std::size_t>> by_class(ds.n_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  Rng rng = stream(seed, kSplitStream);
  std::vector<bool> in_test(ds.size(), false);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.size() < 2) {
      throw ValidationError("split: class '" + ds.class_names[k] + "' has " + std::to_string(idx.size()) +
                            " samples (need >= 2)");
    }
    const auto n = static_cast<long long>(idx.size());
    const auto want = std::llround(test_frac * static_cast<double>(n));
    const auto n_test = static_cast<std::size_t>(std::clamp<long long>(want, 1, n - 1));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t j = 0; j < n_test; ++j) in_test[idx[j]] = true;
  }
  std::pair<LabeledDataset, LabeledDataset> out;
  for (auto* part : {&out.first, &out.second}) {
    part->class_names = ds.class_names;
    part->channel_names = ds.channel_names;
  }
  out.first.split_tag = "train";
  out.second.split_tag = "test";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    LabeledDataset& part = in_test[i] ? out.second : out.first;
    part.slices.push_back(ds.slices[i]);
    part.labels.push_back(ds.labels[i]);
  }
  return out;
}

Recording to_recording(const LabeledDataset& ds) {
  ds.validate();
  if (ds.size() == 0) throw ValidationError("to_recording: empty dataset");
  const std::size_t c = ds.channel_names.size();
  const std::size_t t = ds.slices.front().length();
  const double fs = ds.slices.front().sample_rate_hz;
  const std::size_t T = t * ds.size();
  Recording rec;
  rec.channel_names = ds.channel_names;
  rec.sample_rate_hz = fs;
  rec.samples = Tensor({c, T});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const EegSlice& s = ds.slices[i];
    if (s.length() != t || s.sample_rate_hz != fs) {
      throw ValidationError("to_recording: slice " + std::to_string(i) + " differs in length or sample rate");
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(s.samples.raw() + ch * t, t, rec.samples.raw() + ch * T + i * t);
    }
  }
  return rec;
}

LabeledDataset from_recording(const Recording& recording, std::span<const int> labels, double window_s,
                              double overlap, std::vector<std::string> class_names) {
  LabeledDataset ds;
  ds.slices = slice_signal(recording, window_s, overlap);
  if (labels.size() != ds.slices.size()) {
    throw ValidationError("dataset: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(ds.slices.size()) + " slices");
  }
  ds.labels.assign(labels.begin(), labels.end());
  ds.class_names = std::move(class_names);
  ds.channel_names = recording.channel_names;
  ds.validate();
  return ds;
}

FeatureSet featurize(const LabeledDataset& ds) {
  ds.validate();
  FeatureSet fs;
  fs.n_classes = ds.n_classes();
  fs.labels = ds.labels;
  fs.features.reserve(ds.size());
  for (const auto& s : ds.slices) fs.features.push_back(preliminary_features(s));
  return fs;
}

namespace fs = std::filesystem;

void save_dataset_dir(const std::string& dir, const LabeledDataset& ds, const std::string& montage) {
  ds.validate();
  fs::create_directories(dir);
  const fs::path root(dir);
  const Recording rec = to_recording(ds);
  write_recording((root / kRecordingFile).string(), rec);
  write_labels((root / kLabelsFile).string(), ds.labels);
  nlohmann::ordered_json j;
  j["window_s"] = static_cast<double>(ds.slices.front().length()) / rec.sample_rate_hz;
  j["overlap"] = 0.0;
  j["class_names"] = ds.class_names;
  j["channel_names"] = ds.channel_names;
  j["montage"] = montage;
  detail::write_file((root / kDatasetFile).string(), j.dump(2) + "\n");
}

DatasetInfo read_dataset_info(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw ValidationError("dataset directory '" + dir + "' does not exist");
  const std::string meta_path = (root / kDatasetFile).string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(meta_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(meta_path + ": " + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  DatasetInfo info;
  try {
    info.window_s = j.at("window_s").get<double>();
    info.overlap = j.value("overlap", 0.0);
    info.montage = j.at("montage").get<std::string>();
    info.class_names = j.at("class_names").get<std::vector<std::string>>();
    info.channel_names = j.at("channel_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(meta_path + ": " + e.what());
  }
  return info;
}

DatasetDir load_dataset_dir(const std::string& dir) {
  const fs::path root(dir);
  DatasetDir out;
  out.info = read_dataset_info(dir);
  const Recording rec = read_recording((root / kRecordingFile).string());
  if (rec.channel_names != out.info.channel_names) {
    throw ValidationError("dataset '" + dir + "': recording channels differ from " + kDatasetFile);
  }
  const auto labels = read_labels((root / kLabelsFile).string());
  out.data = from_recording(rec, labels, out.info.window_s, out.info.overlap, out.info.class_names);
  return out;
}

std::string encode_feature_cache(const FeatureSet& f) {
  f.validate();
  const std::size_t n = f.size(), c = f.channels();
  Tensor values({n, c, kBandCount});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(f.features[i].values.raw(), c * kBandCount, values.raw() + i * c * kBandCount);
  }
  Tensor labels({f.labels.size()});
  for (std::size_t i = 0; i < f.labels.size(); ++i) labels[i] = f.labels[i];
  ParameterSet p;
  p.set("features", std::move(values));
  p.set("labels", std::move(labels));
  p.set("n_classes", Tensor::scalar(static_cast<double>(f.n_classes)));
  return encode_checkpoint(p);
}

FeatureSet decode_feature_cache(const std::string& bytes) {
  const ParameterSet p = decode_checkpoint(bytes);
  FeatureSet f;
  try {
    const Tensor& values = p.get("features");
    const Tensor& labels = p.get("labels");
    if (values.rank() != 3 || values.dim(2) != kBandCount || labels.rank() != 1) {
      throw ValidationError("feature cache: unexpected tensor shapes");
    }
    f.n_classes = static_cast<std::size_t>(p.get("n_classes").item());
    const std::size_t n = values.dim(0), c = values.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor m({c, kBandCount});
      std::copy_n(values.raw() + i * c * kBandCount, c * kBandCount, m.raw());
      f.features.push_back({std::move(m)});
    }
    for (double v : labels.values()) f.labels.push_back(static_cast<int>(v));
  } catch (const LookupError& e) {
    throw ValidationError(std::string("feature cache: ") + e.what());
  }
  f.validate();
  return f;
}

FeatureSet load_dataset_features(const std::string& dir) {
  const fs::path cache = fs::path(dir) / kFeatureCacheFile;
  if (fs::exists(cache)) return decode_feature_cache(detail::read_file(cache.string()));
  return featurize(load_dataset_dir(dir).data);
}

Montage resolve_montage(const std::string& name_or_path, const std::vector<std::string>& channels) {
  const auto names = default_montage_names();
  const bool builtin = std::find(names.begin(), names.end(), name_or_path) != names.end();
  const Montage full = builtin ? default_montage(name_or_path) : load_montage(name_or_path);
  return full.select(channels);
}

}  // namespace kdc2
