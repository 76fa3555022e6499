#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hivar/image.hpp"

namespace hivar {

// Peak signal-to-noise ratio in dB over all RGB channels, unit range.
// Identical images return the +infinity sentinel.
double psnr(const Image& a, const Image& b);

// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2,
// C2=(0.03)^2 on unit range, valid window positions, averaged over channels.
double ssim(const Image& a, const Image& b);

struct MetricRecord {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct MetricReport {
  std::vector<MetricRecord> records;
  double mean_psnr() const;
  double mean_ssim() const;
};

// Key-value text, one record per image. LPIPS and FID are reported as
// unavailable rather than approximated.
void write_metric_report(const std::string& path, const MetricReport& report);

}  // namespace hivar
