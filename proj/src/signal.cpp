#include "kdc2/signal.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <set>
#include <unordered_set>

#include "kdc2/errors.hpp"
#include "kdc2/logging.hpp"

namespace kdc2 {
namespace {

// The FFTW planner is not thread-safe; plan execution is.
std::mutex planner_mutex;

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

template <typename T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n), bins_(n / 2 + 1) {
    real_.reset(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
    spectrum_.reset(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins_)));
    masked_.reset(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins_)));
    const int len = static_cast<int>(n);
    std::lock_guard lock(planner_mutex);
    forward_ = fftw_plan_dft_r2c_1d(len, real_.get(), spectrum_.get(), FFTW_ESTIMATE);
    // c2r destroys its input, so it runs on a scratch copy.
    inverse_ = fftw_plan_dft_c2r_1d(len, masked_.get(), real_.get(), FFTW_ESTIMATE);
  }

  ~RealFft() {
    std::lock_guard lock(planner_mutex);
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t bins() const { return bins_; }

  void forward(const double* x) {
    std::copy_n(x, n_, real_.get());
    fftw_execute(forward_);
  }

  // Inverse of the stored spectrum restricted to bins [first, last). Writes n samples.
  void inverse_band(std::size_t first, std::size_t last, double* out) {
    for (std::size_t k = 0; k < bins_; ++k) {
      const bool keep = k >= first && k < last;
      masked_[k][0] = keep ? spectrum_[k][0] : 0.0;
      masked_[k][1] = keep ? spectrum_[k][1] : 0.0;
    }
    fftw_execute(inverse_);
    const double norm = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = real_[i] * norm;
  }

 private:
  std::size_t n_;
  std::size_t bins_;
  FftwBuffer<double> real_;
  FftwBuffer<fftw_complex> spectrum_;
  FftwBuffer<fftw_complex> masked_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

void warn_truncated_gamma(double sample_rate) {
  static std::mutex mutex;
  static std::set<double> seen;
  {
    std::lock_guard lock(mutex);
    if (!seen.insert(sample_rate).second) return;
  }
  warn("sample rate " + std::to_string(sample_rate) + " Hz puts Nyquist below 80 Hz; gamma band truncated at " +
       std::to_string(sample_rate / 2.0) + " Hz");
}

}  // namespace

void Recording::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw ValidationError("recording: sample rate must be positive, got " + std::to_string(sample_rate_hz));
  }
  if (samples.rank() != 2 || samples.dim(0) != channel_names.size()) {
    throw ValidationError("recording: " + std::to_string(channel_names.size()) + " channel names for samples " +
                          to_string(samples.shape()));
  }
  if (samples.dim(1) < 1) throw ValidationError("recording: no samples");
  std::unordered_set<std::string> names;
  for (const auto& n : channel_names) {
    if (!names.insert(n).second) throw ValidationError("recording: duplicate channel name '" + n + "'");
  }
}

std::vector<EegSlice> slice_signal(const Recording& recording, double window_s, double overlap_frac) {
  recording.validate();
  if (!(overlap_frac >= 0.0 && overlap_frac < 1.0)) {
    throw ValidationError("slice_signal: overlap must lie in [0, 1), got " + std::to_string(overlap_frac));
  }
  const double window_samples = window_s * recording.sample_rate_hz;
  if (!(window_samples >= 2.0) || !std::isfinite(window_samples)) {
    throw ValidationError("slice_signal: window of " + std::to_string(window_s) + " s is shorter than 2 samples");
  }
  const auto window = static_cast<std::size_t>(std::llround(window_samples));
  const std::size_t total = recording.length();
  if (window > total) {
    throw ValidationError("slice_signal: window of " + std::to_string(window) + " samples exceeds recording of " +
                          std::to_string(total) + " samples; no slices");
  }
  const auto stride = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(static_cast<double>(window) * (1.0 - overlap_frac))));
  const std::size_t c = recording.channels();
  std::vector<EegSlice> slices;
  for (std::size_t offset = 0; offset + window <= total; offset += stride) {
    Tensor samples({c, window});
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::copy_n(recording.samples.raw() + ch * total + offset, window, samples.raw() + ch * window);
    }
    slices.push_back({std::move(samples), recording.sample_rate_hz, offset});
  }
  return slices;
}

std::array<Tensor, kBandCount> band_decompose(const EegSlice& slice) {
  if (slice.samples.rank() != 2) {
    throw DimensionError("band_decompose: slice must be [c, t], got " + to_string(slice.samples.shape()));
  }
  const std::size_t c = slice.channels();
  const std::size_t t = slice.length();
  if (t < 4) throw ValidationError("band_decompose: slice of " + std::to_string(t) + " samples is too short (< 4)");
  const double fs = slice.sample_rate_hz;
  if (!(fs > 0.0)) throw ValidationError("band_decompose: sample rate must be positive");
  if (fs < 2.0 * kBands.back().hi_hz) warn_truncated_gamma(fs);

  RealFft fft(t);
  // Bin k sits at k * fs / t; keep lo <= f < hi.
  std::array<std::pair<std::size_t, std::size_t>, kBandCount> ranges{};
  for (std::size_t b = 0; b < kBandCount; ++b) {
    std::size_t first = fft.bins(), last = 0;
    for (std::size_t k = 0; k < fft.bins(); ++k) {
      const double f = static_cast<double>(k) * fs / static_cast<double>(t);
      if (f >= kBands[b].lo_hz && f < kBands[b].hi_hz) {
        first = std::min(first, k);
        last = std::max(last, k + 1);
      }
    }
    ranges[b] = first < last ? std::make_pair(first, last) : std::make_pair<std::size_t, std::size_t>(0, 0);
  }

  std::array<Tensor, kBandCount> bands;
  for (auto& b : bands) b = Tensor({c, t});
  for (std::size_t ch = 0; ch < c; ++ch) {
    fft.forward(slice.samples.raw() + ch * t);
    for (std::size_t b = 0; b < kBandCount; ++b) {
      fft.inverse_band(ranges[b].first, ranges[b].second, bands[b].raw() + ch * t);
    }
  }
  return bands;
}

double differential_entropy(std::span<const double> x) {
  if (x.size() < 2) throw ValidationError("differential_entropy: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * std::max(var, kVarianceFloor));
}

PreliminaryFeatures preliminary_features(const EegSlice& slice) {
  const auto bands = band_decompose(slice);
  const std::size_t c = slice.channels();
  const std::size_t t = slice.length();
  Tensor m({c, kBandCount});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t b = 0; b < kBandCount; ++b) {
      m[ch * kBandCount + b] = differential_entropy(std::span<const double>(bands[b].raw() + ch * t, t));
    }
  }
  return {std::move(m)};
}

}  // namespace kdc2
