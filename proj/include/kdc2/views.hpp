#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "kdc2/signal.hpp"
#include "kdc2/tensor.hpp"

namespace kdc2 {

inline constexpr std::size_t kGridSize = 9;

struct Electrode {
  std::string name;
  std::size_t row = 0;
  std::size_t col = 0;
};

/// Channel -> cell placement on the 9x9 scalp grid, in recording channel order.
class Montage {
 public:
  Montage() = default;
  /// Throws MontageError on duplicate names or cells, out-of-grid positions, or > 81 channels.
  explicit Montage(std::vector<Electrode> electrodes);

  const std::vector<Electrode>& electrodes() const noexcept { return electrodes_; }
  std::size_t channels() const noexcept { return electrodes_.size(); }
  std::vector<std::string> channel_names() const;

  /// The electrodes named in `channels`, in that order. Throws MontageError for an unmapped name.
  Montage select(const std::vector<std::string>& channels) const;

 private:
  std::vector<Electrode> electrodes_;
};

/// Parses `<name> <row> <col>` lines; `#` starts a comment.
Montage parse_montage(std::string_view text);
Montage load_montage(const std::string& path);
std::string format_montage(const Montage& montage);

/// Shipped layouts: grid-demo-4, tengrid-62, tengrid-64, tengrid-23. Throws LookupError otherwise.
Montage default_montage(const std::string& name);
std::vector<std::string> default_montage_names();

/// [9, 9, 5] tensor: each channel's band row at its cell, zeros elsewhere.
struct ScalpView {
  Tensor tensor;
};

ScalpView build_scalp_view(const PreliminaryFeatures& features, const Montage& montage);

/// Stacks scalp views of a batch into [B, 9, 9, 5].
Tensor scalp_view_batch(const std::vector<PreliminaryFeatures>& batch, const Montage& montage);

enum class Neighborhood { four = 4, eight = 8 };

struct TopologyGraph {
  Tensor adjacency;           // A, [c, c], symmetric 0/1, zero diagonal
  Tensor self_loop_adjacency; // A + I
  std::vector<double> degree; // row sums of A + I
  Tensor laplacian;           // D^-1/2 (A + I) D^-1/2

  std::size_t nodes() const { return degree.size(); }
};

/// Channels are adjacent when their cells touch: |drow| + |dcol| == 1 for
/// the four-neighborhood, max(|drow|, |dcol|) == 1 for eight.
TopologyGraph build_topology_graph(const Montage& montage, Neighborhood neighborhood = Neighborhood::four);

/// Stacks feature matrices into [B, c, 5].
Tensor feature_batch(const std::vector<PreliminaryFeatures>& batch);

}  // namespace kdc2
