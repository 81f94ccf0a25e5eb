#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/error.hpp"

namespace biaslens::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Little-endian byte sink for the artifact formats.
class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  /// Appends the FNV-1a checksum of everything written so far.
  void seal();

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  template <typename T>
  void put(T v) {
    const auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian reader; every failure carries the byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  void expect_magic(std::string_view m);
  void expect_version(std::uint16_t version);
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  void skip(std::size_t n);

  /// Fails with Truncated unless `payload` more bytes plus the checksum are present,
  /// and with Shape if the file is longer than that.
  void expect_exact_remaining(std::uint64_t payload);
  /// Compares the trailing 8-byte checksum with the hash of all bytes before it.
  /// Does not move the read position.
  void verify_trailing_checksum() const;

  std::uint64_t offset() const { return pos_; }
  std::uint64_t size() const { return bytes_.size(); }

 private:
  template <typename T>
  T get() {
    require(sizeof(T));
    std::array<std::uint8_t, sizeof(T)> raw{};
    std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), sizeof(T), raw.begin());
    pos_ += sizeof(T);
    return std::bit_cast<T>(raw);
  }
  void require(std::size_t n);

  std::vector<std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace biaslens::io
