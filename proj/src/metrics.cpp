#include "hivar/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace hivar {

namespace {

void check_compatible(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("metrics: image sizes differ: " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
}

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_compatible(a, b);
  double mse = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  check_compatible(a, b);
  if (a.height < kWin || a.width < kWin)
    throw ShapeError("ssim: image smaller than the 11x11 window");

  double kernel[kWin];
  double ksum = 0;
  for (int i = 0; i < kWin; ++i) {
    double d = i - (kWin - 1) / 2.0;
    kernel[i] = std::exp(-0.5 * d * d / (kSigma * kSigma));
    ksum += kernel[i];
  }
  for (auto& k : kernel) k /= ksum;

  double total = 0;
  std::int64_t count = 0;
  std::int64_t oh = a.height - kWin + 1, ow = a.width - kWin + 1;
  for (std::int64_t c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int i = 0; i < kWin; ++i) {
          double rx = 0, ry = 0, rxx = 0, ryy = 0, rxy = 0;
          for (int j = 0; j < kWin; ++j) {
            double va = a.at(c, y + i, x + j);
            double vb = b.at(c, y + i, x + j);
            double w = kernel[j];
            rx += w * va;
            ry += w * vb;
            rxx += w * va * va;
            ryy += w * vb * vb;
            rxy += w * va * vb;
          }
          double w = kernel[i];
          mx += w * rx;
          my += w * ry;
          mxx += w * rxx;
          myy += w * ryy;
          mxy += w * rxy;
        }
        double vx = mxx - mx * mx;
        double vy = myy - my * my;
        double cov = mxy - mx * my;
        double s = ((2 * mx * my + kC1) * (2 * cov + kC2)) /
                   ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        total += s;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double MetricReport::mean_psnr() const {
  double s = 0;
  for (const auto& r : records) s += r.psnr;
  return records.empty() ? 0 : s / static_cast<double>(records.size());
}

double MetricReport::mean_ssim() const {
  double s = 0;
  for (const auto& r : records) s += r.ssim;
  return records.empty() ? 0 : s / static_cast<double>(records.size());
}

void write_metric_report(const std::string& path, const MetricReport& report) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open metrics file: " + path);
  f << "# reference-based metrics, RGB, unit range\n";
  f.precision(10);
  for (const auto& r : report.records)
    f << "image=" << r.name << " psnr=" << r.psnr << " ssim=" << r.ssim
      << " lpips=unavailable fid=unavailable\n";
  f << "summary count=" << report.records.size() << " mean_psnr=" << report.mean_psnr()
    << " mean_ssim=" << report.mean_ssim() << "\n";
  if (!f) throw IoError("cannot write metrics file: " + path);
}

}  // namespace hivar
