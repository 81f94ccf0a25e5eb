#include "biaslens/binary_io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include "biaslens/hash.hpp"

namespace biaslens::io {

void ByteWriter::seal() { u64(fnv1a(bytes_)); }

void ByteReader::require(std::size_t n) {
  if (pos_ + n > bytes_.size()) {
    throw FormatError(FormatError::Kind::Truncated, bytes_.size(),
                      "truncated file: needed " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()));
  }
}

void ByteReader::expect_magic(std::string_view m) {
  if (bytes_.size() < m.size() || !std::equal(m.begin(), m.end(), bytes_.begin())) {
    std::string got;
    for (std::size_t i = 0; i < std::min(m.size(), bytes_.size()); ++i) {
      got.push_back(static_cast<char>(bytes_[i]));
    }
    throw FormatError(FormatError::Kind::BadMagic, 0,
                      "bad magic: expected \"" + std::string(m) + "\", found \"" + got + "\"");
  }
  pos_ = m.size();
}

void ByteReader::expect_version(std::uint16_t version) {
  const auto at = pos_;
  const auto v = u16();
  if (v != version) {
    throw FormatError(FormatError::Kind::VersionMismatch, at,
                      "version mismatch: expected " + std::to_string(version) + ", found " + std::to_string(v));
  }
}

void ByteReader::skip(std::size_t n) {
  require(n);
  pos_ += n;
}

void ByteReader::expect_exact_remaining(std::uint64_t payload) {
  const std::uint64_t need = pos_ + payload + 8;
  if (bytes_.size() < need) {
    throw FormatError(FormatError::Kind::Truncated, bytes_.size(),
                      "truncated file: header implies " + std::to_string(need) + " bytes, file has " +
                          std::to_string(bytes_.size()));
  }
  if (bytes_.size() > need) {
    throw FormatError(FormatError::Kind::Shape, need,
                      "unexpected trailing data: header implies " + std::to_string(need) + " bytes, file has " +
                          std::to_string(bytes_.size()));
  }
}

void ByteReader::verify_trailing_checksum() const {
  if (bytes_.size() < 8) {
    throw FormatError(FormatError::Kind::Truncated, bytes_.size(), "truncated file: no room for checksum");
  }
  const std::uint64_t at = bytes_.size() - 8;
  const auto expected = fnv1a(std::span<const std::uint8_t>(bytes_.data(), at));
  std::array<std::uint8_t, 8> raw{};
  std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(at), 8, raw.begin());
  const auto stored = std::bit_cast<std::uint64_t>(raw);
  if (stored != expected) {
    throw FormatError(FormatError::Kind::Checksum, at,
                      "checksum mismatch: stored " + hex64(stored) + ", computed " + hex64(expected));
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, 0, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, 0, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(FormatError::Kind::Io, 0, "write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatError::Kind::Io, 0, "cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::Io, 0, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace biaslens::io
