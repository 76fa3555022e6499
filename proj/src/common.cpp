#include "hivar/common.hpp"

#include <sstream>

namespace hivar {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void throw_shape_mismatch(const std::string& what, const Shape& a, const Shape& b) {
  throw ShapeError(what + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
}

std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

}  // namespace hivar
