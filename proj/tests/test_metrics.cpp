#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hivar/metrics.hpp"
#include "hivar/rng.hpp"

using namespace hivar;

namespace {
Image const_image(std::int64_t side, double v) {
  Image img(side, side);
  std::fill(img.data.begin(), img.data.end(), v);
  return img;
}

Image noisy(const Image& src, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  Image out = src;
  for (auto& v : out.data) v = std::clamp(v + rng.normal(0.0, sigma), 0.0, 1.0);
  return out;
}
}  // namespace

TEST_CASE("psnr of identical images is the +inf sentinel") {
  Image a = const_image(16, 0.3);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(a, a) > 0);
}

TEST_CASE("psnr of a uniform 0.5 difference is 6.0206 dB") {
  Image a = const_image(16, 0.25), b = const_image(16, 0.75);
  CHECK(psnr(a, b) == doctest::Approx(6.0205999132).epsilon(1e-6));
}

TEST_CASE("psnr is symmetric") {
  Rng rng(3);
  Image a(12, 12), b(12, 12);
  for (auto& v : a.data) v = rng.uniform(0.0, 1.0);
  for (auto& v : b.data) v = rng.uniform(0.0, 1.0);
  CHECK(psnr(a, b) == psnr(b, a));
}

TEST_CASE("psnr decreases as noise grows (averaged over seeds)") {
  Rng rng(5);
  Image base(24, 24);
  for (auto& v : base.data) v = rng.uniform(0.2, 0.8);
  double prev = 1e9;
  for (double sigma : {0.01, 0.02, 0.04, 0.08}) {
    double mean = 0;
    for (std::uint64_t s = 0; s < 5; ++s) mean += psnr(base, noisy(base, sigma, 100 + s));
    mean /= 5;
    CHECK(mean < prev);
    prev = mean;
  }
}

TEST_CASE("ssim of an image with itself is 1") {
  Rng rng(7);
  Image a(20, 20);
  for (auto& v : a.data) v = rng.uniform(0.0, 1.0);
  CHECK(std::fabs(ssim(a, a) - 1.0) < 1e-12);
}

TEST_CASE("ssim of constant 0 vs constant 1 matches the scalar formula") {
  // single-window hand evaluation: mu_x=0, mu_y=1, all variances zero:
  //   (2*0*1 + C1)(0 + C2) / ((0 + 1 + C1)(0 + C2)) = C1 / (1 + C1)
  double c1 = 0.01 * 0.01;
  double expect = c1 / (1.0 + c1);
  Image a = const_image(16, 0.0), b = const_image(16, 1.0);
  CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ssim is invariant when both images shift together") {
  // feature kept away from the borders; every sliding window sees the same
  // (a, b) statistics before and after the joint translation
  Rng rng(11);
  auto make_pair = [&](std::int64_t dy, std::int64_t dx) {
    Image a = const_image(48, 0.4), b = const_image(48, 0.45);
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 0; x < 8; ++x)
        for (std::int64_t c = 0; c < 3; ++c) {
          a.at(c, 18 + dy + y, 18 + dx + x) = 0.1 + 0.08 * ((y * 3 + x + c) % 7);
          b.at(c, 18 + dy + y, 18 + dx + x) = 0.2 + 0.07 * ((y * 5 + x) % 5);
        }
    return std::make_pair(a, b);
  };
  auto [a0, b0] = make_pair(0, 0);
  auto [a1, b1] = make_pair(3, 5);
  CHECK(ssim(a0, b0) == doctest::Approx(ssim(a1, b1)).epsilon(1e-9));
}

TEST_CASE("ssim stays within [-1, 1]") {
  Rng rng(13);
  for (int t = 0; t < 10; ++t) {
    Image a(16, 16), b(16, 16);
    for (auto& v : a.data) v = rng.uniform(0.0, 1.0);
    for (auto& v : b.data) v = rng.uniform(0.0, 1.0);
    double s = ssim(a, b);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("metrics reject mismatched shapes") {
  Image a(16, 16), b(16, 18);
  CHECK_THROWS_AS(psnr(a, b), ShapeError);
  CHECK_THROWS_AS(ssim(a, b), ShapeError);
}

TEST_CASE("metric reports serialize as one key-value record per image") {
  MetricReport rep;
  rep.records.push_back({"img_000.png", 31.5, 0.91});
  rep.records.push_back({"img_001.png", 28.25, 0.87});
  auto path = (std::filesystem::temp_directory_path() / "hivar_metrics.txt").string();
  write_metric_report(path, rep);
  std::ifstream f(path);
  std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(all.find("image=img_000.png psnr=31.5 ssim=0.91") != std::string::npos);
  CHECK(all.find("lpips=unavailable fid=unavailable") != std::string::npos);
  CHECK(all.find("summary count=2") != std::string::npos);
  std::remove(path.c_str());
}
