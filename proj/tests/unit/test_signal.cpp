#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "kdc2/errors.hpp"
#include "kdc2/logging.hpp"
#include "kdc2/signal.hpp"

using namespace kdc2;

namespace {

constexpr double kPi = std::numbers::pi;

Recording make_recording(std::size_t c, std::size_t T, double fs, std::uint64_t seed = 0) {
  Recording r;
  for (std::size_t i = 0; i < c; ++i) r.channel_names.push_back("ch" + std::to_string(i));
  r.sample_rate_hz = fs;
  r.samples = Tensor({c, T});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : r.samples.values()) v = n(rng);
  return r;
}

EegSlice sine_slice(double freq, double fs, std::size_t t, double amplitude = 1.0) {
  EegSlice s;
  s.sample_rate_hz = fs;
  s.samples = Tensor({1, t});
  for (std::size_t k = 0; k < t; ++k) s.samples[k] = amplitude * std::sin(2.0 * kPi * freq * k / fs);
  return s;
}

double energy(const Tensor& t) {
  double e = 0.0;
  for (double v : t.values()) e += v * v;
  return e;
}

}  // namespace

TEST(SliceSignal, ExactFitGivesOneSlice) {
  const auto slices = slice_signal(make_recording(2, 600, 200.0), 3.0, 0.0);
  ASSERT_EQ(slices.size(), 1u);
  EXPECT_EQ(slices[0].length(), 600u);
  EXPECT_EQ(slices[0].origin_offset, 0u);
}

TEST(SliceSignal, HalfOverlapOffsets) {
  const auto slices = slice_signal(make_recording(2, 1200, 200.0), 3.0, 0.5);
  // Offsets enumerated by hand: stride 300, windows of 600 in 1200 samples.
  std::vector<std::size_t> offsets;
  for (const auto& s : slices) offsets.push_back(s.origin_offset);
  EXPECT_EQ(offsets, (std::vector<std::size_t>{0, 300, 600}));
}

TEST(SliceSignal, FourSecondTrialGivesOneSlice) {
  EXPECT_EQ(slice_signal(make_recording(3, 640, 160.0), 4.0, 0.0).size(), 1u);
}

TEST(SliceSignal, PartialWindowDropped) {
  const Recording r = make_recording(1, 1000, 100.0);
  const auto slices = slice_signal(r, 3.0, 0.0);
  ASSERT_EQ(slices.size(), 3u);
  EXPECT_EQ(slices[2].origin_offset, 600u);
  EXPECT_EQ(slices[1].samples[5], r.samples.at({0, 305}));
}

TEST(SliceSignal, RejectsBadWindows) {
  const Recording r = make_recording(1, 100, 100.0);
  EXPECT_THROW(slice_signal(r, 2.0, 0.0), ValidationError);
  EXPECT_THROW(slice_signal(r, 0.01, 0.0), ValidationError);
  EXPECT_THROW(slice_signal(r, 0.5, 1.0), ValidationError);
}

TEST(Recording, ValidateRejectsDuplicateNames) {
  Recording r = make_recording(2, 10, 100.0);
  r.channel_names[1] = r.channel_names[0];
  EXPECT_THROW(r.validate(), ValidationError);
}

TEST(BandDecompose, TenHertzSineLandsInAlpha) {
  const auto bands = band_decompose(sine_slice(10.0, 200.0, 400));
  const double total = energy(sine_slice(10.0, 200.0, 400).samples);
  EXPECT_GE(energy(bands[2]), 0.99 * total);
  for (std::size_t k : {0u, 1u, 3u, 4u}) EXPECT_LT(energy(bands[k]), 0.01 * total) << kBandNames[k];
}

TEST(BandDecompose, ConstantSignalVanishes) {
  EegSlice s;
  s.sample_rate_hz = 200.0;
  s.samples = Tensor::full({2, 200}, 3.7);
  for (const auto& band : band_decompose(s)) {
    for (double v : band.values()) EXPECT_LT(std::abs(v), 1e-9);
  }
}

TEST(BandDecompose, BandEnergiesBoundedByTotal) {
  const Recording r = make_recording(3, 256, 200.0, 5);
  EegSlice s{r.samples, 200.0, 0};
  double sum = 0.0;
  for (const auto& band : band_decompose(s)) sum += energy(band);
  EXPECT_LE(sum, energy(r.samples) * (1.0 + 1e-12));
}

TEST(BandDecompose, MatchesDirectDftMask) {
  // Independent oracle: O(t^2) DFT, mask, inverse DFT.
  const Recording r = make_recording(1, 64, 200.0, 9);
  EegSlice s{r.samples, 200.0, 0};
  const auto bands = band_decompose(s);
  const std::size_t t = 64;
  std::vector<double> re(t), im(t);
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t n = 0; n < t; ++n) {
      re[k] += r.samples[n] * std::cos(2 * kPi * k * n / t);
      im[k] -= r.samples[n] * std::sin(2 * kPi * k * n / t);
    }
  for (std::size_t b = 0; b < kBandCount; ++b) {
    for (std::size_t n = 0; n < t; ++n) {
      double x = 0.0;
      for (std::size_t k = 0; k < t; ++k) {
        const std::size_t kk = k <= t / 2 ? k : t - k;
        const double f = kk * 200.0 / t;
        if (f < kBands[b].lo_hz || f >= kBands[b].hi_hz) continue;
        x += re[k] * std::cos(2 * kPi * k * n / t) - im[k] * std::sin(2 * kPi * k * n / t);
      }
      EXPECT_NEAR(bands[b][n], x / t, 1e-10) << "band " << b << " sample " << n;
    }
  }
}

TEST(BandDecompose, TooShortSlice) {
  EXPECT_THROW(band_decompose(sine_slice(10.0, 200.0, 3)), ValidationError);
}

TEST(BandDecompose, LowSampleRateWarns) {
  std::vector<std::string> warnings;
  auto previous = set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
  band_decompose(sine_slice(10.0, 100.0, 100));
  set_warning_sink(previous);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(DifferentialEntropy, UnitVariance) {
  const std::vector<double> x = {1.0, -1.0, 1.0, -1.0};
  EXPECT_NEAR(differential_entropy(x), 1.4189385, 1e-6);
  EXPECT_NEAR(differential_entropy(x), 0.5 * std::log(2 * kPi * std::numbers::e), 1e-15);
}

TEST(DifferentialEntropy, ConstantInputHitsFloor) {
  const std::vector<double> x(50, 4.2);
  EXPECT_NEAR(differential_entropy(x), -7.7914018, 1e-6);
}

TEST(DifferentialEntropy, ScalingAndOffset) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> x(333), doubled(333), shifted(333);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = n(rng);
    doubled[i] = 2.0 * x[i];
    shifted[i] = x[i] + 0.25;
  }
  EXPECT_NEAR(differential_entropy(doubled) - differential_entropy(x), std::log(2.0), 1e-9);
  // An offset of 0.25 is exact in binary, but the mean is not; compare within rounding.
  EXPECT_NEAR(differential_entropy(shifted), differential_entropy(x), 1e-12);
  std::vector<double> ints = {1, 2, 3, 4}, ints_shifted = {101, 102, 103, 104};
  EXPECT_EQ(differential_entropy(ints), differential_entropy(ints_shifted));
}

TEST(DifferentialEntropy, TooShort) {
  EXPECT_THROW(differential_entropy(std::vector<double>{1.0}), ValidationError);
}

TEST(PreliminaryFeatures, SineAlphaEntry) {
  const PreliminaryFeatures m = preliminary_features(sine_slice(10.0, 200.0, 200));
  ASSERT_EQ(m.values.shape(), (Shape{1, 5}));
  EXPECT_NEAR(m.values.at({0, 2}), 0.5 * std::log(2 * kPi * std::numbers::e * 0.5), 1e-9);
  EXPECT_NEAR(m.values.at({0, 2}), 1.0723, 1e-4);
  for (std::size_t k : {0u, 1u, 3u, 4u}) EXPECT_NEAR(m.values.at({0, k}), -7.7914018, 1e-6);
}

TEST(PreliminaryFeatures, ChannelLocalAndPermutationEquivariant) {
  const Recording r = make_recording(4, 200, 200.0, 11);
  EegSlice s{r.samples, 200.0, 0};
  const PreliminaryFeatures base = preliminary_features(s);

  const std::vector<std::size_t> perm = {2, 0, 3, 1};
  EegSlice permuted = s;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 200; ++k) permuted.samples.at({i, k}) = s.samples.at({perm[i], k});
  const PreliminaryFeatures pm = preliminary_features(permuted);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(pm.values.at({i, b}), base.values.at({perm[i], b}));

  EegSlice changed = s;
  for (std::size_t k = 0; k < 200; ++k) changed.samples.at({1, k}) *= 3.0;
  const PreliminaryFeatures cm = preliminary_features(changed);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t b = 0; b < 5; ++b) {
      if (i == 1) EXPECT_NE(cm.values.at({i, b}), base.values.at({i, b}));
      else EXPECT_EQ(cm.values.at({i, b}), base.values.at({i, b}));
    }
  }
}

TEST(PreliminaryFeatures, IdenticalChannelsGiveIdenticalRows) {
  Recording r = make_recording(2, 200, 200.0, 12);
  for (std::size_t k = 0; k < 200; ++k) r.samples.at({1, k}) = r.samples.at({0, k});
  const PreliminaryFeatures m = preliminary_features(EegSlice{r.samples, 200.0, 0});
  for (std::size_t b = 0; b < 5; ++b) EXPECT_EQ(m.values.at({0, b}), m.values.at({1, b}));
}

TEST(PreliminaryFeatures, Reproducible) {
  const Recording r = make_recording(3, 300, 200.0, 13);
  EXPECT_EQ(preliminary_features(EegSlice{r.samples, 200.0, 0}).values,
            preliminary_features(EegSlice{r.samples, 200.0, 0}).values);
}
