#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdc2/tensor.hpp"

namespace kdc2 {

inline constexpr std::size_t kBandCount = 5;

struct BandEdges {
  double lo_hz;
  double hi_hz;
};

/// delta, theta, alpha, beta, gamma. Half-open [lo, hi) so the bands are disjoint.
/// This order is used for every feature matrix in the system.
inline constexpr std::array<BandEdges, kBandCount> kBands = {{
    {0.5, 4.0},
    {4.0, 8.0},
    {8.0, 12.0},
    {12.0, 30.0},
    {30.0, 80.0},
}};

inline constexpr std::array<const char*, kBandCount> kBandNames = {"delta", "theta", "alpha", "beta", "gamma"};

/// Variance floor applied before the log in differential_entropy.
inline constexpr double kVarianceFloor = 1e-8;

struct Recording {
  std::vector<std::string> channel_names;
  double sample_rate_hz = 0.0;
  Tensor samples;  // [c, T], microvolts

  std::size_t channels() const { return channel_names.size(); }
  std::size_t length() const { return samples.rank() == 2 ? samples.dim(1) : 0; }

  /// Throws ValidationError unless names are unique and match the sample matrix.
  void validate() const;
};

struct EegSlice {
  Tensor samples;  // [c, t]
  double sample_rate_hz = 0.0;
  std::size_t origin_offset = 0;

  std::size_t channels() const { return samples.dim(0); }
  std::size_t length() const { return samples.dim(1); }
};

/// Differential-entropy features, one row per channel, columns in kBands order.
struct PreliminaryFeatures {
  Tensor values;  // [c, 5]

  std::size_t channels() const { return values.dim(0); }
};

/// Whole windows of `window_s` seconds. Stride is floor(window * (1 - overlap)),
/// at least one sample; a trailing partial window is dropped.
std::vector<EegSlice> slice_signal(const Recording& recording, double window_s, double overlap_frac);

/// Splits every channel into the five bands by zeroing FFT bins outside
/// [lo, hi) and inverting. Each result has the slice's [c, t] shape.
std::array<Tensor, kBandCount> band_decompose(const EegSlice& slice);

/// 0.5 * ln(2 pi e max(var, kVarianceFloor)) with the population variance.
double differential_entropy(std::span<const double> x);

PreliminaryFeatures preliminary_features(const EegSlice& slice);

}  // namespace kdc2
