#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "hivar/common.hpp"

namespace hivar {

// Little-endian binary readers/writers shared by the HVTN/HVTK/HVCK codecs.
// Readers throw ParseError carrying the byte offset of the failure.

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  std::uint64_t pos() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  void read_bytes(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw ParseError("unexpected end of file: need " + std::to_string(n) + " bytes", pos_);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint8_t read_u8() {
    std::uint8_t v;
    read_bytes(&v, 1);
    return v;
  }
  std::uint32_t read_u32() {
    std::uint8_t b[4];
    read_bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t read_u64() {
    std::uint64_t lo = read_u32();
    std::uint64_t hi = read_u32();
    return lo | (hi << 32);
  }
  double read_f64() {
    std::uint64_t bits = read_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::uint32_t read_varint32() {
    std::uint32_t v = 0;
    int shift = 0;
    for (;;) {
      std::uint8_t b = read_u8();
      v |= static_cast<std::uint32_t>(b & 0x7f) << shift;
      if (!(b & 0x80)) return v;
      shift += 7;
      if (shift > 28) throw ParseError("varint too long", pos_);
    }
  }
  void expect_magic(const char magic[4]) {
    char m[4];
    read_bytes(m, 4);
    if (std::memcmp(m, magic, 4) != 0)
      throw ParseError(std::string("bad magic, expected '") + std::string(magic, 4) + "'", pos_ - 4);
  }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

class ByteWriter {
 public:
  void write_bytes(const void* src, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    buf_.insert(buf_.end(), p, p + n);
  }
  void write_u8(std::uint8_t v) { buf_.push_back(v); }
  void write_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void write_u64(std::uint64_t v) {
    write_u32(static_cast<std::uint32_t>(v));
    write_u32(static_cast<std::uint32_t>(v >> 32));
  }
  void write_f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(bits);
  }
  void write_varint32(std::uint32_t v) {
    while (v >= 0x80) {
      buf_.push_back(static_cast<std::uint8_t>(v) | 0x80);
      v >>= 7;
    }
    buf_.push_back(static_cast<std::uint8_t>(v));
  }
  void write_magic(const char magic[4]) { write_bytes(magic, 4); }

  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace hivar
