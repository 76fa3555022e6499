#pragma once

#include <cstdint>

#include "hivar/image.hpp"
#include "hivar/rng.hpp"

namespace hivar {

// Conditioning classes for the degradation-aware model. The integer values
// are part of the CLI surface (--class {0,1}) and the class embedding layout.
enum class DegradationClass : std::int32_t {
  kDegraded = 0,
  kNonDegraded = 1,
  kClassFree = 2,
};

// Simplified blind-SR degradation: Gaussian blur, area downsample, additive
// Gaussian noise. With probability `bilinear_only_prob` only a bilinear
// downsample is applied instead.
struct DegradationConfig {
  double blur_sigma_lo = 0.2;
  double blur_sigma_hi = 2.0;
  std::int64_t factor = 4;
  double noise_sigma_lo = 0.0;
  double noise_sigma_hi = 0.05;
  double bilinear_only_prob = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DegradeResult {
  Image lr;
  DegradationClass cls;
};

// Pure function of (hr, cfg): all randomness comes from cfg.seed.
// Throws ShapeError when hr dimensions are not divisible by cfg.factor.
DegradeResult degrade(const Image& hr, const DegradationConfig& cfg);

// Separable Gaussian blur, kernel radius ceil(3*sigma), reflect-101 borders.
// sigma <= 0 returns the input unchanged.
Image gaussian_blur(const Image& img, double sigma);

}  // namespace hivar
