#include "hivar/degrade.hpp"

#include <algorithm>
#include <cmath>

namespace hivar {

void DegradationConfig::validate() const {
  if (factor < 1) throw Error("degrade: factor must be >= 1");
  if (bilinear_only_prob < 0.0 || bilinear_only_prob > 1.0)
    throw Error("degrade: bilinear_only_prob must be in [0,1]");
  if (blur_sigma_lo > blur_sigma_hi || noise_sigma_lo > noise_sigma_hi)
    throw Error("degrade: empty sigma range");
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  std::int64_t radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  if (radius < 1) return img;
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;

  auto reflect = [](std::int64_t i, std::int64_t n) {
    // reflect-101: ..., 2, 1 | 0, 1, ..., n-1 | n-2, n-3, ...
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };

  Image tmp(img.height, img.width);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x) {
        double acc = 0;
        for (std::int64_t i = -radius; i <= radius; ++i)
          acc += k[i + radius] * img.at(c, y, reflect(x + i, img.width));
        tmp.at(c, y, x) = acc;
      }
  Image out(img.height, img.width);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x) {
        double acc = 0;
        for (std::int64_t i = -radius; i <= radius; ++i)
          acc += k[i + radius] * tmp.at(c, reflect(y + i, img.height), x);
        out.at(c, y, x) = acc;
      }
  return out;
}

DegradeResult degrade(const Image& hr, const DegradationConfig& cfg) {
  cfg.validate();
  if (hr.height % cfg.factor != 0 || hr.width % cfg.factor != 0)
    throw ShapeError("degrade: image " + std::to_string(hr.height) + "x" +
                     std::to_string(hr.width) + " not divisible by factor " +
                     std::to_string(cfg.factor));
  std::int64_t lh = hr.height / cfg.factor, lw = hr.width / cfg.factor;
  Rng rng(cfg.seed);

  if (rng.bernoulli(cfg.bilinear_only_prob)) {
    Image lr = interpolate(hr, lh, lw, ResampleMode::kBilinear);
    lr.clamp01();
    return {std::move(lr), DegradationClass::kNonDegraded};
  }

  double blur_sigma = cfg.blur_sigma_lo == cfg.blur_sigma_hi
                          ? cfg.blur_sigma_lo
                          : rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi);
  double noise_sigma = cfg.noise_sigma_lo == cfg.noise_sigma_hi
                           ? cfg.noise_sigma_lo
                           : rng.uniform(cfg.noise_sigma_lo, cfg.noise_sigma_hi);
  Image lr = interpolate(gaussian_blur(hr, blur_sigma), lh, lw, ResampleMode::kArea);
  if (noise_sigma > 0.0)
    for (auto& v : lr.data) v += rng.normal(0.0, noise_sigma);
  lr.clamp01();
  return {std::move(lr), DegradationClass::kDegraded};
}

}  // namespace hivar
