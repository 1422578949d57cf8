#include "rclp/container_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rclp/error.hpp"

namespace rclp::container {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xFF));
  }
}

}  // namespace

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(v); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::i64(std::int64_t v) { put_le(buf_, static_cast<std::uint64_t>(v)); }
void ByteWriter::f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::header(Tag tag) {
  buf_.insert(buf_.end(), std::begin(kMagic), std::end(kMagic));
  u32(kVersion);
  u8(static_cast<std::uint8_t>(tag));
}

void ByteReader::need(std::size_t n) const {
  if (buf_.size() - pos_ < n) {
    fail(ErrorCode::kIo, "truncated container: needed " + std::to_string(n) +
                             " bytes at offset " + std::to_string(pos_));
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

std::int64_t ByteReader::i64() { return static_cast<std::int64_t>(u64()); }
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t len = u32();
  need(len);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), len);
  pos_ += len;
  return s;
}

Tag ByteReader::header() {
  const std::size_t have = std::min(buf_.size(), sizeof(kMagic));
  if (std::memcmp(buf_.data(), kMagic, have) != 0) fail(ErrorCode::kFormat, "bad container magic");
  need(sizeof(kMagic));
  pos_ = sizeof(kMagic);
  const std::uint32_t version = u32();
  if (version != kVersion) {
    fail(ErrorCode::kFormat, "unsupported container version " + std::to_string(version));
  }
  const std::uint8_t tag = u8();
  if (tag < 1 || tag > 5) fail(ErrorCode::kFormat, "unknown section tag " + std::to_string(tag));
  return static_cast<Tag>(tag);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

ByteReader open(const std::filesystem::path& path, Tag& tag) {
  ByteReader reader(read_file(path));
  tag = reader.header();
  return reader;
}

}  // namespace rclp::container
