#pragma once

// Little-endian byte codecs shared by the checkpoint and recording formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>

#include "kdc2/errors.hpp"

namespace kdc2::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class ByteWriter {
 public:
  void raw(const void* data, std::size_t n) { out_.append(static_cast<const char*>(data), n); }

  template <typename T>
  void put(T v) {
    const T le = to_little(v);
    raw(&le, sizeof(T));
  }

  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const char* what) : bytes_(bytes), what_(what) {}

  std::uint64_t offset() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw ParseError(std::string(what_) + ": truncated while reading " + field + " (need " + std::to_string(n) +
                           " bytes, " + std::to_string(remaining()) + " left)",
                       pos_);
    }
  }

  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }

  std::uint32_t u32(const char* field) { return get<std::uint32_t>(field); }
  std::uint64_t u64(const char* field) { return get<std::uint64_t>(field); }
  double f64(const char* field) { return std::bit_cast<double>(get<std::uint64_t>(field)); }

  std::string str(const char* field) {
    const std::uint32_t n = u32(field);
    return bytes(n, field);
  }

  [[noreturn]] void fail(const std::string& message, std::uint64_t at) const {
    throw ParseError(std::string(what_) + ": " + message, at);
  }

 private:
  const std::string& bytes_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace kdc2::detail
