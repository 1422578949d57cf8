#pragma once

// Little-endian byte codec shared by every section of the RCLP container.
//
// Layout: "RCLP" | u32 version (=1) | u8 section tag | tag-specific payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace rclp::container {

inline constexpr char kMagic[4] = {'R', 'C', 'L', 'P'};
inline constexpr std::uint32_t kVersion = 1;

enum class Tag : std::uint8_t {
  kEmbeddings = 1,
  kCatalog = 2,
  kLabels = 3,
  kBasis = 4,
  kAdapter = 5,
};

class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v);
  void f32(float v);
  void f64(double v);
  void str(std::string_view s);  // u32 length prefix + UTF-8 bytes

  void header(Tag tag);

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; running past the end raises an I/O error.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64();
  float f32();
  double f64();
  std::string str();

  /// Checks magic and version, returns the section tag.
  Tag header();

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Reads a file and validates its header; the reader is positioned after the tag.
ByteReader open(const std::filesystem::path& path, Tag& tag);

}  // namespace rclp::container
