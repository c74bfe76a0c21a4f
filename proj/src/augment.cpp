#include "kdc2/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdc2/errors.hpp"

namespace kdc2 {
namespace {

void check_features(const char* op, const PreliminaryFeatures& m) {
  if (m.values.rank() != 2 || m.values.dim(1) != kBandCount) {
    throw DimensionError(std::string(op) + ": features must be [c,5], got " + to_string(m.values.shape()));
  }
}

// Fisher-Yates with explicit bounded draws.
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  return perm;
}

}  // namespace

std::string to_string(AugmentMethod method) {
  switch (method) {
    case AugmentMethod::mask:
      return "mask";
    case AugmentMethod::spatial_shuffle:
      return "spatial_shuffle";
    case AugmentMethod::frequency_shuffle:
      return "frequency_shuffle";
    case AugmentMethod::hybrid:
      return "hybrid";
  }
  return "?";
}

AugmentMethod parse_augment_method(const std::string& name) {
  if (name == "mask") return AugmentMethod::mask;
  if (name == "spatial_shuffle") return AugmentMethod::spatial_shuffle;
  if (name == "frequency_shuffle") return AugmentMethod::frequency_shuffle;
  if (name == "hybrid") return AugmentMethod::hybrid;
  throw ValidationError("unknown augmentation method '" + name + "'");
}

void AugmentConfig::validate() const {
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) {
    throw ValidationError("augmentation: mask rate must lie in [0, 1], got " + std::to_string(mask_rate));
  }
  if (methods.empty()) throw ValidationError("augmentation: empty method reservoir");
}

PreliminaryFeatures mask_channels(const PreliminaryFeatures& m, double rate, Rng& rng) {
  check_features("mask_channels", m);
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw ContractError("mask_channels: rate must lie in [0, 1], got " + std::to_string(rate));
  }
  const std::size_t c = m.channels();
  const auto k = static_cast<std::size_t>(std::lround(rate * static_cast<double>(c)));
  PreliminaryFeatures out = m;
  const auto perm = random_permutation(c, rng);
  for (std::size_t i = 0; i < k; ++i) {
    std::fill_n(out.values.raw() + perm[i] * kBandCount, kBandCount, 0.0);
  }
  return out;
}

PreliminaryFeatures spatial_shuffle(const PreliminaryFeatures& m, Rng& rng) {
  check_features("spatial_shuffle", m);
  const std::size_t c = m.channels();
  const auto perm = random_permutation(c, rng);
  PreliminaryFeatures out = m;
  for (std::size_t i = 0; i < c; ++i) {
    std::copy_n(m.values.raw() + perm[i] * kBandCount, kBandCount, out.values.raw() + i * kBandCount);
  }
  return out;
}

PreliminaryFeatures frequency_shuffle(const PreliminaryFeatures& m, Rng& rng) {
  check_features("frequency_shuffle", m);
  PreliminaryFeatures out = m;
  for (std::size_t i = 0; i < m.channels(); ++i) {
    const auto perm = random_permutation(kBandCount, rng);
    for (std::size_t b = 0; b < kBandCount; ++b) {
      out.values[i * kBandCount + b] = m.values[i * kBandCount + perm[b]];
    }
  }
  return out;
}

PreliminaryFeatures hybrid(const PreliminaryFeatures& m, double rate, Rng& rng) {
  return mask_channels(frequency_shuffle(spatial_shuffle(m, rng), rng), rate, rng);
}

PreliminaryFeatures apply_augmentation(AugmentMethod method, const PreliminaryFeatures& m, double rate, Rng& rng) {
  switch (method) {
    case AugmentMethod::mask:
      return mask_channels(m, rate, rng);
    case AugmentMethod::spatial_shuffle:
      return spatial_shuffle(m, rng);
    case AugmentMethod::frequency_shuffle:
      return frequency_shuffle(m, rng);
    case AugmentMethod::hybrid:
      return hybrid(m, rate, rng);
  }
  throw ContractError("apply_augmentation: unknown method");
}

std::vector<AugmentedSample> draw_augmentations(const PreliminaryFeatures& m, std::size_t count,
                                                const AugmentConfig& config, Rng& rng) {
  if (count < 1) throw ContractError("draw_augmentations: need at least one augmentation");
  config.validate();
  std::vector<AugmentedSample> out;
  out.reserve(count);
  std::uniform_int_distribution<std::size_t> pick(0, config.methods.size() - 1);
  for (std::size_t i = 0; i < count; ++i) {
    AugmentedSample s;
    s.aug_id = i + 1;
    s.method = config.methods[pick(rng)];
    s.rng_seed = rng();
    Rng local(s.rng_seed);
    s.features = apply_augmentation(s.method, m, config.mask_rate, local);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace kdc2
