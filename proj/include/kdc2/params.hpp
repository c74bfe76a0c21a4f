#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kdc2/tensor.hpp"

namespace kdc2 {

/// Named tensors in insertion order. Order is preserved through checkpoints.
class ParameterSet {
 public:
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  void erase(const std::string& name);

  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::vector<std::string> names() const;
  std::size_t size() const noexcept { return entries_.size(); }

  /// Entries whose name starts with `prefix`.
  ParameterSet with_prefix(const std::string& prefix) const;
  /// Copies every entry of `other` into this set, replacing same-named ones.
  void merge(const ParameterSet& other);

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint bytes: "KDC2", u32 version, then per parameter
/// u32 name length, name bytes, u32 rank, rank x u64 dims, fp64 values.
/// All integers and floats little-endian.
std::string encode_checkpoint(const ParameterSet& params);
/// Throws ParseError (with byte offset) on bad magic, unknown version or truncation.
ParameterSet decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::string& path);

/// Throws ValidationError when any name in `expected` is missing from `actual`
/// or present with a different shape.
void require_shapes(const ParameterSet& actual, const ParameterSet& expected);

}  // namespace kdc2
