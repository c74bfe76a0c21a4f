#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kdc2/signal.hpp"
#include "kdc2/training.hpp"
#include "kdc2/views.hpp"

namespace kdc2 {

struct LabeledDataset {
  std::vector<EegSlice> slices;
  std::vector<int> labels;  // parallel to slices
  std::vector<std::string> class_names;
  std::vector<std::string> channel_names;
  std::string split_tag = "all";

  std::size_t size() const noexcept { return slices.size(); }
  std::size_t n_classes() const noexcept { return class_names.size(); }
  void validate() const;
};

// Recording file layout, little-endian:
//   "KREC" | u32 version | u32 c | u64 T | f64 fs | c x (u32 len, UTF-8 name) | c*T f64, row-major
inline constexpr std::uint32_t kRecordingVersion = 1;

std::string encode_recording(const Recording& recording);
Recording decode_recording(const std::string& bytes);
void write_recording(const std::string& path, const Recording& recording);
Recording read_recording(const std::string& path);

/// `slice_index,label` rows, optional header, every index 0..n-1 exactly once.
std::vector<int> parse_labels_csv(std::string_view text);
std::string format_labels_csv(std::span<const int> labels);
std::vector<int> read_labels(const std::string& path);
void write_labels(const std::string& path, std::span<const int> labels);

struct SynthSpec {
  std::size_t n_classes = 3;
  std::size_t channels = 16;
  double sample_rate_hz = 200.0;
  double window_s = 1.0;
  std::size_t samples_per_class = 300;
  /// Sinusoid amplitude over the unit background noise sigma.
  double snr = 3.0;
  std::uint64_t seed = 0;
  /// Per class. Empty selects the defaults (see with_defaults).
  std::vector<std::size_t> boosted_band;
  std::vector<std::vector<std::size_t>> boosted_channels;
  std::vector<std::string> channel_names;

  /// Fills empty fields: class k boosts band {2,3,1,4,0}[k % 5] on channels
  /// i with i % n_classes == k; names come from synth_channel_names.
  SynthSpec with_defaults() const;
  void validate() const;
};

/// The c channels of tengrid-62 closest to the grid center, nearest first.
std::vector<std::string> synth_channel_names(std::size_t c);

/// Midpoint of a band's edges in Hz.
double band_center_hz(std::size_t band);

/// Balanced: sample i has label i % n_classes. Each sample is N(0,1) noise on
/// every channel plus snr * sin(2 pi f t + phi) on the class's channels, with f
/// the boosted band's center and phi uniform per sample.
LabeledDataset synth_generate(const SynthSpec& spec);

/// Stratified. Per class n_test = clamp(round(test_frac * n_k), 1, n_k - 1).
/// Both parts keep the original order.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double test_frac, std::uint64_t seed);

/// Concatenates equal-length slices back into one recording.
Recording to_recording(const LabeledDataset& ds);

/// Slices a recording and attaches labels (one per slice).
LabeledDataset from_recording(const Recording& recording, std::span<const int> labels, double window_s,
                              double overlap, std::vector<std::string> class_names);

FeatureSet featurize(const LabeledDataset& ds);

// A dataset directory holds recording.krec, labels.csv and dataset.json
// ({"window_s", "overlap", "class_names", "channel_names", "montage"}), plus
// features.kfeat once featurized.
inline constexpr const char* kRecordingFile = "recording.krec";
inline constexpr const char* kLabelsFile = "labels.csv";
inline constexpr const char* kDatasetFile = "dataset.json";
inline constexpr const char* kFeatureCacheFile = "features.kfeat";

struct DatasetInfo {
  double window_s = 1.0;
  double overlap = 0.0;
  std::vector<std::string> class_names;
  std::vector<std::string> channel_names;
  std::string montage;  // default montage name or a montage file path
};

struct DatasetDir {
  DatasetInfo info;
  LabeledDataset data;
};

/// Slices are written back to back, so the stored overlap is 0.
void save_dataset_dir(const std::string& dir, const LabeledDataset& ds, const std::string& montage);
DatasetInfo read_dataset_info(const std::string& dir);
DatasetDir load_dataset_dir(const std::string& dir);

/// Features of a dataset directory: the cache when present, else computed.
FeatureSet load_dataset_features(const std::string& dir);

/// Cache layout reuses the checkpoint codec with entries "features" [N,c,5],
/// "labels" [N] and "n_classes" [].
std::string encode_feature_cache(const FeatureSet& features);
FeatureSet decode_feature_cache(const std::string& bytes);

/// A default montage name or a montage file, restricted to `channels` in order.
Montage resolve_montage(const std::string& name_or_path, const std::vector<std::string>& channels);

}  // namespace kdc2
