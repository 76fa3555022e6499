#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hivar {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when tensor/image shapes are incompatible; message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised on malformed files; carries the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& msg, std::uint64_t offset)
      : Error(msg + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when training produces non-finite losses.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

[[noreturn]] void throw_shape_mismatch(const std::string& what, const Shape& a, const Shape& b);

std::int64_t numel_of(const Shape& s);

}  // namespace hivar
