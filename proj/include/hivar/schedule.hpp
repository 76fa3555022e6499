#pragma once

#include <cstdint>
#include <vector>

#include "hivar/common.hpp"

namespace hivar {

// Level resolutions and target scales of the multi-scale quantizer, plus the
// induced level->scale partition. Level l quantizes a rho_l x rho_l grid;
// target scale s_n owns the contiguous level block (b_{n-1}, b_n] with
// b_n = argmax_k { rho_k <= s_n * rho_L }.
struct ScaleSchedule {
  std::vector<std::int64_t> resolutions;  // rho_1..rho_L, non-decreasing
  std::vector<double> scales;             // s_1..s_N in (0,1], s_N == 1
  std::vector<std::int64_t> boundaries;   // b_1..b_N (1-based level indices), b_N == L

  static ScaleSchedule make(std::vector<std::int64_t> resolutions, std::vector<double> scales);

  std::int64_t levels() const { return static_cast<std::int64_t>(resolutions.size()); }
  std::int64_t num_scales() const { return static_cast<std::int64_t>(scales.size()); }
  std::int64_t rho_max() const { return resolutions.back(); }
  std::int64_t rho(std::int64_t level) const { return resolutions.at(level - 1); }  // 1-based

  // Feature-space resolution scale n works at: s_n * rho_L (validated integral).
  std::int64_t working_res(std::int64_t n) const;

  // Sum over levels of rho_l^2.
  std::int64_t total_tokens() const;

  // 1-based index of the scale owning 1-based level l.
  std::int64_t scale_of_level(std::int64_t l) const;

  // Schedule of the scale-n downsampled problem: levels 1..b_n with target
  // scales rescaled by 1/s_n. Tokenizing interpolate(I, s_n) with this
  // schedule must reproduce the first b_n level grids (prefix consistency).
  ScaleSchedule truncated(std::int64_t n) const;

  bool operator==(const ScaleSchedule& o) const {
    return resolutions == o.resolutions && scales == o.scales;
  }
};

}  // namespace hivar
