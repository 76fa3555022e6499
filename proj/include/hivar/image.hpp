#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hivar/resample.hpp"
#include "hivar/tensor.hpp"

namespace hivar {

// RGB image, channel-major [3][h][w], values nominally in [0,1].
// Values are clamped to [0,1] when constructed from files or emitted to them;
// intermediate pipeline values are not constrained.
struct Image {
  static constexpr std::int64_t kChannels = 3;

  std::int64_t height = 0, width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::int64_t h, std::int64_t w)
      : height(h), width(w), data(static_cast<std::size_t>(kChannels * h * w), 0.0) {}

  double& at(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data[(c * height + y) * width + x];
  }
  double at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data[(c * height + y) * width + x];
  }

  Tensor to_tensor() const;
  static Image from_tensor(const Tensor& t, bool clamp = true);
  void clamp01();
};

Image interpolate(const Image& src, std::int64_t h2, std::int64_t w2,
                  ResampleMode mode = ResampleMode::kAuto);

// PNG, 8-bit RGB. Reading accepts grayscale/palette/alpha inputs and converts.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// Raw tensor container, format "HVTN": magic, u32 version, u32 rank,
// u64 extents[rank], f64 payload, all little-endian. Lossless round-trip.
Tensor read_raw_tensor(const std::string& path);
void write_raw_tensor(const std::string& path, const Tensor& t);

}  // namespace hivar
