#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "kdc2/signal.hpp"

namespace kdc2 {

using Rng = std::mt19937_64;

enum class AugmentMethod { mask, spatial_shuffle, frequency_shuffle, hybrid };

std::string to_string(AugmentMethod method);
AugmentMethod parse_augment_method(const std::string& name);

struct AugmentConfig {
  double mask_rate = 0.25;
  /// Methods the reservoir draws from, uniformly.
  std::vector<AugmentMethod> methods = {AugmentMethod::mask, AugmentMethod::spatial_shuffle,
                                        AugmentMethod::frequency_shuffle, AugmentMethod::hybrid};

  void validate() const;
};

struct AugmentedSample {
  PreliminaryFeatures features;
  std::size_t aug_id = 0;  // 1..m
  AugmentMethod method = AugmentMethod::mask;
  std::uint64_t rng_seed = 0;  // replaying `method` with Rng(rng_seed) reproduces `features`
};

/// Zeroes round(rate * c) distinct channels chosen uniformly.
PreliminaryFeatures mask_channels(const PreliminaryFeatures& m, double rate, Rng& rng);

/// Permutes channel rows by one uniform draw from the c! orders. The montage is untouched,
/// so each row lands on another channel's cell.
PreliminaryFeatures spatial_shuffle(const PreliminaryFeatures& m, Rng& rng);

/// Permutes each channel's five band values by an independent uniform draw.
PreliminaryFeatures frequency_shuffle(const PreliminaryFeatures& m, Rng& rng);

/// spatial_shuffle, then frequency_shuffle, then mask_channels(rate).
PreliminaryFeatures hybrid(const PreliminaryFeatures& m, double rate, Rng& rng);

PreliminaryFeatures apply_augmentation(AugmentMethod method, const PreliminaryFeatures& m, double rate, Rng& rng);

/// m augmented copies, each with its own method draw and seed. Each copy feeds
/// both views so representations with the same aug_id correspond across views.
std::vector<AugmentedSample> draw_augmentations(const PreliminaryFeatures& m, std::size_t count,
                                                const AugmentConfig& config, Rng& rng);

}  // namespace kdc2
