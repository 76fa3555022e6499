#include "hivar/schedule.hpp"

#include <cmath>

namespace hivar {

namespace {

std::int64_t to_integral(double v, const char* what) {
  double r = std::round(v);
  if (std::fabs(v - r) > 1e-9 || r < 1)
    throw Error(std::string(what) + ": " + std::to_string(v) + " is not a positive integer");
  return static_cast<std::int64_t>(r);
}

}  // namespace

ScaleSchedule ScaleSchedule::make(std::vector<std::int64_t> resolutions,
                                  std::vector<double> scales) {
  if (resolutions.empty()) throw Error("schedule: no resolutions");
  for (std::size_t i = 0; i < resolutions.size(); ++i) {
    if (resolutions[i] < 1) throw Error("schedule: resolutions must be >= 1");
    // non-decreasing: repeated resolutions express classic same-resolution RQ
    if (i > 0 && resolutions[i] < resolutions[i - 1])
      throw Error("schedule: resolutions must be non-decreasing");
  }
  if (scales.empty()) throw Error("schedule: no target scales");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] <= 0.0 || scales[i] > 1.0) throw Error("schedule: scales must lie in (0,1]");
    if (i > 0 && scales[i] <= scales[i - 1])
      throw Error("schedule: scales must be strictly increasing");
  }
  if (scales.back() != 1.0) throw Error("schedule: last scale must be 1");

  ScaleSchedule s;
  s.resolutions = std::move(resolutions);
  s.scales = std::move(scales);
  std::int64_t rho_l = s.resolutions.back();
  std::int64_t prev = 0;
  for (double sc : s.scales) {
    std::int64_t target = to_integral(sc * static_cast<double>(rho_l), "schedule: s_n * rho_L");
    std::int64_t b = 0;
    for (std::size_t k = 0; k < s.resolutions.size(); ++k)
      if (s.resolutions[k] <= target) b = static_cast<std::int64_t>(k + 1);
    if (b <= prev)
      throw Error("schedule: scale " + std::to_string(sc) + " owns no levels");
    s.boundaries.push_back(b);
    prev = b;
  }
  return s;
}

std::int64_t ScaleSchedule::working_res(std::int64_t n) const {
  return to_integral(scales.at(n - 1) * static_cast<double>(rho_max()),
                     "schedule: s_n * rho_L");
}

std::int64_t ScaleSchedule::total_tokens() const {
  std::int64_t t = 0;
  for (auto r : resolutions) t += r * r;
  return t;
}

std::int64_t ScaleSchedule::scale_of_level(std::int64_t l) const {
  for (std::size_t n = 0; n < boundaries.size(); ++n)
    if (l <= boundaries[n]) return static_cast<std::int64_t>(n + 1);
  throw Error("schedule: level " + std::to_string(l) + " out of range");
}

ScaleSchedule ScaleSchedule::truncated(std::int64_t n) const {
  if (n < 1 || n > num_scales()) throw Error("schedule: scale index out of range");
  std::vector<std::int64_t> res(resolutions.begin(), resolutions.begin() + boundaries[n - 1]);
  std::vector<double> sc;
  for (std::int64_t m = 0; m < n; ++m) sc.push_back(scales[m] / scales[n - 1]);
  sc.back() = 1.0;
  return make(std::move(res), std::move(sc));
}

}  // namespace hivar
