#include "kdc2/params.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "kdc2/errors.hpp"

namespace kdc2 {

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path + "'");
}

}  // namespace detail

void ParameterSet::set(const std::string& name, Tensor value) {
  for (auto& [n, v] : entries_) {
    if (n == name) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(name, std::move(value));
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw LookupError("no parameter named '" + name + "'");
}

Tensor& ParameterSet::get(const std::string& name) {
  for (auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw LookupError("no parameter named '" + name + "'");
}

void ParameterSet::erase(const std::string& name) {
  std::erase_if(entries_, [&](const auto& e) { return e.first == name; });
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

ParameterSet ParameterSet::with_prefix(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [n, v] : entries_) {
    if (n.starts_with(prefix)) out.set(n, v);
  }
  return out;
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const auto& [n, v] : other.entries()) set(n, v);
}

std::string encode_checkpoint(const ParameterSet& params) {
  detail::ByteWriter w;
  w.raw("KDC2", 4);
  w.u32(kCheckpointVersion);
  for (const auto& [name, t] : params.entries()) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

ParameterSet decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.bytes(4, "magic") != "KDC2") r.fail("bad magic, expected 'KDC2'", 0);
  const auto version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    r.fail("unsupported format version " + std::to_string(version), version_at);
  }
  ParameterSet params;
  while (!r.done()) {
    const auto entry_at = r.offset();
    std::string name = r.str("parameter name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) r.fail("implausible rank " + std::to_string(rank) + " for '" + name + "'", entry_at);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u64("dimension"));
    std::size_t n = 1;
    for (auto d : shape) {
      if (d != 0 && n > r.remaining() / 8 / d) r.fail("dimensions of '" + name + "' exceed file size", entry_at);
      n *= d;
    }
    r.need(n * 8, "parameter values");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64("parameter value");
    if (params.contains(name)) r.fail("duplicate parameter '" + name + "'", entry_at);
    params.set(name, Tensor(std::move(shape), std::move(values)));
  }
  return params;
}

void save_checkpoint(const std::string& path, const ParameterSet& params) {
  detail::write_file(path, encode_checkpoint(params));
}

ParameterSet load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

void require_shapes(const ParameterSet& actual, const ParameterSet& expected) {
  for (const auto& [name, t] : expected.entries()) {
    if (!actual.contains(name)) throw ValidationError("checkpoint is missing parameter '" + name + "'");
    const Tensor& a = actual.get(name);
    if (a.shape() != t.shape()) {
      throw ValidationError("checkpoint parameter '" + name + "' has shape " + to_string(a.shape()) + ", expected " +
                            to_string(t.shape()));
    }
  }
}

}  // namespace kdc2
