#include "kdc2/views.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "kdc2/errors.hpp"

namespace kdc2 {
namespace {

// Shipped layouts, one string per grid row, "-" for an empty cell. These are
// hand placements of the standard 10-20 / 10-10 names on a 9x9 top-down grid
// (rows front to back, columns left to right) and only approximate real
// electrode geometry.
using GridRows = std::array<const char*, kGridSize>;

// Four channels filling the top-left 2x2 block.
constexpr GridRows kGridDemo4 = {
    "A B - - - - - - -", "C D - - - - - - -", "- - - - - - - - -", "- - - - - - - - -", "- - - - - - - - -",
    "- - - - - - - - -", "- - - - - - - - -", "- - - - - - - - -", "- - - - - - - - -",
};

// 62-channel ESI NeuroScan cap.
constexpr GridRows kTengrid62 = {
    "- - - FP1 FPZ FP2 - - -",
    "- - - AF3 - AF4 - - -",
    "F7 F5 F3 F1 FZ F2 F4 F6 F8",
    "FT7 FC5 FC3 FC1 FCZ FC2 FC4 FC6 FT8",
    "T7 C5 C3 C1 CZ C2 C4 C6 T8",
    "TP7 CP5 CP3 CP1 CPZ CP2 CP4 CP6 TP8",
    "P7 P5 P3 P1 PZ P2 P4 P6 P8",
    "- PO7 PO5 PO3 POZ PO4 PO6 PO8 -",
    "- - CB1 O1 OZ O2 CB2 - -",
};

// 64-channel BCI2000 cap. T9/T10 and Iz have no natural cell on a 9x9 grid
// and sit in the nearest free positions.
constexpr GridRows kTengrid64 = {
    "- - - Fp1 Fpz Fp2 - - -",
    "- AF7 - AF3 AFz AF4 - AF8 -",
    "F7 F5 F3 F1 Fz F2 F4 F6 F8",
    "FT7 FC5 FC3 FC1 FCz FC2 FC4 FC6 FT8",
    "T7 C5 C3 C1 Cz C2 C4 C6 T8",
    "TP7 CP5 CP3 CP1 CPz CP2 CP4 CP6 TP8",
    "P7 P5 P3 P1 Pz P2 P4 P6 P8",
    "T9 PO7 - PO3 POz PO4 - PO8 T10",
    "- - - O1 Oz O2 Iz - -",
};

// 23-channel double-banana bipolar montage. Each derivation sits near the
// midpoint of its two electrodes; the repeated T8-P8 derivation is suffixed.
constexpr GridRows kTengrid23 = {
    "- - - - - - - - -",
    "- FP1-F7 FP1-F3 - - - FP2-F4 FP2-F8 -",
    "- - - - - - - - -",
    "F7-T7 - F3-C3 - FZ-CZ - F4-C4 - F8-T8",
    "T7-FT9 - - - FT9-FT10 - - - FT10-T8",
    "T7-P7 P7-T7 C3-P3 - CZ-PZ - C4-P4 - T8-P8-0",
    "- - - - - - - - T8-P8-1",
    "- P7-O1 P3-O1 - - - P4-O2 P8-O2 -",
    "- - - - - - - - -",
};

// Channel order of the shipped montages follows the grid scan (row-major).
Montage from_grid(const GridRows& rows) {
  std::vector<Electrode> electrodes;
  for (std::size_t r = 0; r < kGridSize; ++r) {
    std::istringstream is(rows[r]);
    std::string cell;
    std::size_t c = 0;
    while (is >> cell) {
      if (cell != "-") electrodes.push_back({cell, r, c});
      ++c;
    }
    if (c != kGridSize) throw MontageError("internal montage table row " + std::to_string(r) + " is malformed");
  }
  return Montage(std::move(electrodes));
}

}  // namespace

Montage::Montage(std::vector<Electrode> electrodes) : electrodes_(std::move(electrodes)) {
  if (electrodes_.size() > kGridSize * kGridSize) {
    throw MontageError("montage: " + std::to_string(electrodes_.size()) + " channels do not fit a 9x9 grid");
  }
  std::set<std::string> names;
  std::map<std::pair<std::size_t, std::size_t>, std::string> cells;
  for (const auto& e : electrodes_) {
    if (e.name.empty()) throw MontageError("montage: empty channel name");
    if (e.row >= kGridSize || e.col >= kGridSize) {
      throw MontageError("montage: channel '" + e.name + "' at (" + std::to_string(e.row) + "," +
                         std::to_string(e.col) + ") lies outside the 9x9 grid");
    }
    if (!names.insert(e.name).second) throw MontageError("montage: duplicate channel '" + e.name + "'");
    auto [it, inserted] = cells.emplace(std::make_pair(e.row, e.col), e.name);
    if (!inserted) {
      throw MontageError("montage: channels '" + it->second + "' and '" + e.name + "' share cell (" +
                         std::to_string(e.row) + "," + std::to_string(e.col) + ")");
    }
  }
}

std::vector<std::string> Montage::channel_names() const {
  std::vector<std::string> names;
  names.reserve(electrodes_.size());
  for (const auto& e : electrodes_) names.push_back(e.name);
  return names;
}

Montage Montage::select(const std::vector<std::string>& channels) const {
  std::unordered_map<std::string, const Electrode*> by_name;
  for (const auto& e : electrodes_) by_name.emplace(e.name, &e);
  std::vector<Electrode> picked;
  picked.reserve(channels.size());
  for (const auto& name : channels) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw MontageError("montage: channel '" + name + "' is not mapped");
    picked.push_back(*it->second);
  }
  return Montage(std::move(picked));
}

Montage parse_montage(std::string_view text) {
  std::vector<Electrode> electrodes;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string name;
    if (!(ls >> name)) continue;
    long long row = -1, col = -1;
    std::string extra;
    if (!(ls >> row >> col) || (ls >> extra)) {
      throw ParseError("montage: expected '<name> <row> <col>' on line " + std::to_string(line_no), line_no);
    }
    if (row < 0 || col < 0) throw ParseError("montage: negative grid position", line_no);
    electrodes.push_back({name, static_cast<std::size_t>(row), static_cast<std::size_t>(col)});
  }
  return Montage(std::move(electrodes));
}

Montage load_montage(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("montage: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_montage(ss.str());
}

std::string format_montage(const Montage& montage) {
  std::ostringstream os;
  os << "# name row col\n";
  for (const auto& e : montage.electrodes()) os << e.name << ' ' << e.row << ' ' << e.col << '\n';
  return os.str();
}

Montage default_montage(const std::string& name) {
  if (name == "grid-demo-4") return from_grid(kGridDemo4);
  if (name == "tengrid-62") return from_grid(kTengrid62);
  if (name == "tengrid-64") return from_grid(kTengrid64);
  if (name == "tengrid-23") return from_grid(kTengrid23);
  throw LookupError("unknown montage '" + name + "'");
}

std::vector<std::string> default_montage_names() { return {"grid-demo-4", "tengrid-62", "tengrid-64", "tengrid-23"}; }

ScalpView build_scalp_view(const PreliminaryFeatures& features, const Montage& montage) {
  const Tensor& m = features.values;
  if (m.rank() != 2 || m.dim(1) != kBandCount) {
    throw DimensionError("build_scalp_view: features must be [c,5], got " + to_string(m.shape()));
  }
  if (m.dim(0) != montage.channels()) {
    throw MontageError("build_scalp_view: " + std::to_string(m.dim(0)) + " feature rows for a montage of " +
                       std::to_string(montage.channels()) + " channels");
  }
  Tensor sv({kGridSize, kGridSize, kBandCount});
  for (std::size_t i = 0; i < montage.channels(); ++i) {
    const auto& e = montage.electrodes()[i];
    for (std::size_t b = 0; b < kBandCount; ++b) {
      sv[(e.row * kGridSize + e.col) * kBandCount + b] = m[i * kBandCount + b];
    }
  }
  return {std::move(sv)};
}

Tensor scalp_view_batch(const std::vector<PreliminaryFeatures>& batch, const Montage& montage) {
  constexpr std::size_t cell = kGridSize * kGridSize * kBandCount;
  Tensor out({batch.size(), kGridSize, kGridSize, kBandCount});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const ScalpView sv = build_scalp_view(batch[n], montage);
    std::copy_n(sv.tensor.raw(), cell, out.raw() + n * cell);
  }
  return out;
}

Tensor feature_batch(const std::vector<PreliminaryFeatures>& batch) {
  if (batch.empty()) throw DimensionError("feature_batch: empty batch");
  const std::size_t c = batch.front().channels();
  Tensor out({batch.size(), c, kBandCount});
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Tensor& m = batch[n].values;
    if (m.shape() != Shape{c, kBandCount}) {
      throw DimensionError("feature_batch: sample " + std::to_string(n) + " has shape " + to_string(m.shape()));
    }
    std::copy_n(m.raw(), c * kBandCount, out.raw() + n * c * kBandCount);
  }
  return out;
}

TopologyGraph build_topology_graph(const Montage& montage, Neighborhood neighborhood) {
  const std::size_t c = montage.channels();
  if (c == 0) throw MontageError("build_topology_graph: empty montage");
  TopologyGraph g;
  g.adjacency = Tensor({c, c});
  const auto& es = montage.electrodes();
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      const auto dr = static_cast<long>(es[i].row) - static_cast<long>(es[j].row);
      const auto dc = static_cast<long>(es[i].col) - static_cast<long>(es[j].col);
      const bool adjacent = neighborhood == Neighborhood::four ? std::abs(dr) + std::abs(dc) == 1
                                                               : std::max(std::abs(dr), std::abs(dc)) == 1;
      if (adjacent) g.adjacency[i * c + j] = 1.0;
    }
  }
  g.self_loop_adjacency = g.adjacency;
  for (std::size_t i = 0; i < c; ++i) g.self_loop_adjacency[i * c + i] += 1.0;
  g.degree.assign(c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) g.degree[i] += g.self_loop_adjacency[i * c + j];
  }
  g.laplacian = Tensor({c, c});
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      g.laplacian[i * c + j] = g.self_loop_adjacency[i * c + j] / std::sqrt(g.degree[i] * g.degree[j]);
    }
  }
  return g;
}

}  // namespace kdc2
