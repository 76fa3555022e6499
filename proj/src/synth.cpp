#include "hivar/synth.hpp"

#include <algorithm>
#include <cmath>

namespace hivar {

namespace {

constexpr double kPi = 3.14159265358979323846;

void fill_gradient(Image& img, Rng& rng) {
  double theta = rng.uniform(0.0, 2.0 * kPi);
  double dx = std::cos(theta), dy = std::sin(theta);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.0, 1.0);
    c1[c] = rng.uniform(0.0, 1.0);
  }
  double diag = std::sqrt(2.0) * static_cast<double>(std::max(img.height, img.width));
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x) {
      double t = 0.5 + (dx * x + dy * y) / diag;
      t = std::clamp(t, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = c0[c] + (c1[c] - c0[c]) * t;
    }
}

void fill_checker(Image& img, Rng& rng) {
  std::int64_t period = rng.uniform_int(8, 16);
  std::int64_t ox = rng.uniform_int(0, period - 1);
  std::int64_t oy = rng.uniform_int(0, period - 1);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.0, 0.45);
    c1[c] = rng.uniform(0.55, 1.0);
  }
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x) {
      bool odd = (((x + ox) / period) + ((y + oy) / period)) % 2 != 0;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = odd ? c1[c] : c0[c];
    }
}

void fill_blobs(Image& img, Rng& rng) {
  double base[3];
  for (int c = 0; c < 3; ++c) base[c] = rng.uniform(0.1, 0.9);
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = base[c];
  std::int64_t blobs = rng.uniform_int(2, 5);
  for (std::int64_t k = 0; k < blobs; ++k) {
    double cy = rng.uniform(0.0, static_cast<double>(img.height));
    double cx = rng.uniform(0.0, static_cast<double>(img.width));
    double sigma = rng.uniform(3.0, static_cast<double>(img.width) / 5.0);
    double amp[3];
    for (int c = 0; c < 3; ++c) amp[c] = rng.uniform(-0.8, 0.8);
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x) {
        double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        double g = std::exp(-0.5 * d2 / (sigma * sigma));
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += amp[c] * g;
      }
  }
  img.clamp01();
}

void fill_band_noise(Image& img, Rng& rng) {
  const int waves = 6;
  double maxf = static_cast<double>(img.width) / 8.0;
  for (int c = 0; c < 3; ++c) {
    double fy[waves], fx[waves], ph[waves], am[waves];
    for (int k = 0; k < waves; ++k) {
      fy[k] = rng.uniform(-maxf, maxf);
      fx[k] = rng.uniform(-maxf, maxf);
      ph[k] = rng.uniform(0.0, 2.0 * kPi);
      am[k] = rng.uniform(0.3, 1.0);
    }
    double lo = 1e9, hi = -1e9;
    std::vector<double> plane(static_cast<std::size_t>(img.height * img.width));
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x) {
        double v = 0;
        for (int k = 0; k < waves; ++k)
          v += am[k] * std::sin(2.0 * kPi * (fy[k] * y + fx[k] * x) /
                                    static_cast<double>(img.width) +
                                ph[k]);
        plane[y * img.width + x] = v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    double span = hi - lo > 1e-12 ? hi - lo : 1.0;
    for (std::int64_t y = 0; y < img.height; ++y)
      for (std::int64_t x = 0; x < img.width; ++x)
        img.at(c, y, x) = 0.1 + 0.8 * (plane[y * img.width + x] - lo) / span;
  }
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
  if (count < 1 || resolution < 1) throw Error("synth: count and resolution must be >= 1");
  double total = w_gradient + w_checker + w_blob + w_noise;
  if (w_gradient < 0 || w_checker < 0 || w_blob < 0 || w_noise < 0 || total <= 0)
    throw Error("synth: pattern mix weights must be non-negative and not all zero");
}

Image synth_image(const SyntheticDatasetSpec& spec, std::int64_t index) {
  spec.validate();
  Rng rng = Rng::substream(spec.seed, 0x53594e ^ static_cast<std::uint64_t>(index));
  Image img(spec.resolution, spec.resolution);
  double total = spec.w_gradient + spec.w_checker + spec.w_blob + spec.w_noise;
  double pickv = rng.uniform(0.0, total);
  if (pickv < spec.w_gradient) {
    fill_gradient(img, rng);
  } else if (pickv < spec.w_gradient + spec.w_checker) {
    fill_checker(img, rng);
  } else if (pickv < spec.w_gradient + spec.w_checker + spec.w_blob) {
    fill_blobs(img, rng);
  } else {
    fill_band_noise(img, rng);
  }
  return img;
}

std::vector<Image> synth_dataset(const SyntheticDatasetSpec& spec) {
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (std::int64_t i = 0; i < spec.count; ++i) out.push_back(synth_image(spec, i));
  return out;
}

}  // namespace hivar
