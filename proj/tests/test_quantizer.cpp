#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "hivar/binio.hpp"
#include "hivar/quantizer.hpp"
#include "hivar/resample.hpp"

using namespace hivar;

namespace {

Codebook codebook_with_origin(std::int64_t k, std::int64_t n_z, Rng& rng, double stddev) {
  Codebook cb = Codebook::random(k, n_z, rng, stddev);
  for (std::int64_t j = 0; j < n_z; ++j) cb.param().tensor.values()[j] = 0.0;
  return cb;
}

// Deterministic stand-in encoder: area-downsample the image to the working
// resolution, then a fixed random 1x1 channel mix to n_z channels.
EncodeFn stub_encoder(std::int64_t n_z, std::int64_t feature_ratio, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = Tensor::randn({n_z, 3, 1, 1}, rng, 0.8);
  Tensor b = Tensor::randn({n_z}, rng, 0.1);
  return [w, b, feature_ratio](const Tensor& img) {
    Tensor small = resize(img, img.dim(1) / feature_ratio, img.dim(2) / feature_ratio,
                          ResampleMode::kArea);
    return conv2d(small, w, b, 1, 0);
  };
}

Tensor random_image_tensor(std::int64_t side, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor::uniform({3, side, side}, rng, 0.0, 1.0);
}

ScaleSchedule desk_schedule() {
  return ScaleSchedule::make({2, 3, 4, 6, 8, 12, 16}, {0.25, 0.5, 1.0});
}

}  // namespace

TEST_CASE("vq_quantize returns an exact codebook match with zero residual") {
  Rng rng(1);
  Codebook cb = Codebook::random(8, 4, rng, 1.0);
  std::vector<double> z(cb.row(3), cb.row(3) + 4);
  auto [idx, vec] = vq_quantize(z, cb);
  CHECK(idx == 3);
  for (std::int64_t j = 0; j < 4; ++j) CHECK(vec[j] == z[j]);
}

TEST_CASE("vq_quantize picks the brute-force nearest entry") {
  Codebook cb(2, 2);
  cb.param().tensor.values() = {1.0, 0.0, 0.0, 1.0};
  auto [idx, vec] = vq_quantize({0.9, 0.1}, cb);
  CHECK(idx == 0);
}

TEST_CASE("vq_quantize breaks ties toward the lowest index") {
  Codebook cb(2, 1);
  cb.param().tensor.values() = {-1.0, 1.0};
  auto [idx, vec] = vq_quantize({0.0}, cb);
  CHECK(idx == 0);
}

TEST_CASE("nearest-neighbor agrees with an independent brute-force oracle") {
  Rng rng(7);
  Codebook cb = Codebook::random(64, 8, rng, 1.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> z(8);
    for (auto& v : z) v = rng.normal(0.0, 1.2);
    // oracle: plain full scan with strict improvement
    std::int32_t best = 0;
    double best_d = 1e300;
    for (std::int64_t i = 0; i < cb.size(); ++i) {
      double d = 0;
      for (int j = 0; j < 8; ++j) {
        double e = cb.row(i)[j] - z[j];
        d += e * e;
      }
      if (d < best_d) {
        best_d = d;
        best = static_cast<std::int32_t>(i);
      }
    }
    CHECK(vq_quantize(z, cb).index == best);
  }
}

TEST_CASE("var_rq on the 1-D three-level example reproduces the hand run") {
  // codebook {1.0, 0.5, 0.0}, z = 1.4, three levels at full resolution:
  // level 1 picks 1.0 (residual 0.4), level 2 picks 0.5 (residual -0.1),
  // level 3 picks 0.0 (residual stays -0.1); cumulative 1.5.
  Codebook cb(3, 1);
  cb.param().tensor.values() = {1.0, 0.5, 0.0};
  ScaleSchedule sched = ScaleSchedule::make({1, 1, 1}, {1.0});
  Tensor z = Tensor::from_data({1, 1, 1}, {1.4});
  RqOutputs out = var_rq_tokenize(z, cb, sched, PhiFilter::identity());
  REQUIRE(out.tokens.levels.size() == 3);
  CHECK(out.tokens.levels[0][0] == 0);
  CHECK(out.tokens.levels[1][0] == 1);
  CHECK(out.tokens.levels[2][0] == 2);
  CHECK(out.cumulative.values()[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(out.residual_norms[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(out.residual_norms[1] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(out.residual_norms[2] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("single-level schedule reduces var_rq to pointwise vq") {
  Rng rng(11);
  Codebook cb = Codebook::random(16, 4, rng, 1.0);
  ScaleSchedule sched = ScaleSchedule::make({5}, {1.0});
  Tensor z = Tensor::randn({4, 5, 5}, rng);
  RqOutputs out = var_rq_tokenize(z, cb, sched, PhiFilter::identity());
  auto expect = quantize_map(z, cb);
  CHECK(out.tokens.levels[0] == expect);
}

TEST_CASE("residual norms are non-increasing across levels (RQ contraction)") {
  Rng rng(13);
  int violations = 0;
  for (int t = 0; t < 100; ++t) {
    Codebook cb = codebook_with_origin(64, 8, rng, 0.5);
    Tensor z = Tensor::randn({8, 16, 16}, rng);
    RqOutputs out = var_rq_tokenize(z, cb, desk_schedule(), PhiFilter::identity());
    double prev = 0;
    for (double v : z.values()) prev += v * v;
    prev = std::sqrt(prev);
    for (double n : out.residual_norms) {
      if (n > prev + 1e-9) ++violations;
      prev = n;
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("degenerate partition: target scales (1.0) reproduce plain RQ tokens") {
  ScaleSchedule multi = desk_schedule();
  ScaleSchedule single = ScaleSchedule::make(multi.resolutions, {1.0});
  Rng rng(17);
  Codebook cb = Codebook::random(32, 6, rng, 0.6);
  auto enc = stub_encoder(6, 4, 21);
  for (auto* phi_kind : {"id", "conv"}) {
    PhiFilter phi = std::string(phi_kind) == "id" ? PhiFilter::identity()
                                                  : PhiFilter::shared_conv(6);
    if (!phi.is_identity) {
      Rng prng(23);
      for (auto& v : phi.weight.tensor.values()) v += prng.normal(0.0, 0.05);
    }
    Tensor img = random_image_tensor(64, 29);
    HierarchicalOutputs h = hierarchical_tokenize(img, enc, cb, single, phi);
    RqOutputs flat = var_rq_tokenize(enc(img), cb, single, phi);
    CHECK(h.tokens.levels == flat.tokens.levels);
  }
}

TEST_CASE("prefix consistency: committed levels match tokenizations of downsampled images") {
  ScaleSchedule sched = desk_schedule();
  Rng rng(19);
  Codebook cb = Codebook::random(48, 6, rng, 0.6);
  PhiFilter phi = PhiFilter::shared_conv(6);
  Rng prng(31);
  for (auto& v : phi.weight.tensor.values()) v += prng.normal(0.0, 0.05);
  auto enc = stub_encoder(6, 4, 37);

  for (int t = 0; t < 5; ++t) {
    Tensor img = random_image_tensor(64, 100 + t);
    HierarchicalOutputs full = hierarchical_tokenize(img, enc, cb, sched, phi);

    // scale 1 (single scale): plain multi-scale RQ of the encoded 16x16 image
    Tensor img_s1 = resize(img, 16, 16, ResampleMode::kArea);
    RqOutputs s1 = var_rq_tokenize(enc(img_s1), cb, sched.truncated(1), phi);
    for (std::int64_t l = 0; l < sched.boundaries[0]; ++l)
      CHECK(full.tokens.levels[l] == s1.tokens.levels[l]);

    // scale 2: hierarchical tokenization of the 32x32 image, truncated schedule
    Tensor img_s2 = resize(img, 32, 32, ResampleMode::kArea);
    HierarchicalOutputs s2 = hierarchical_tokenize(img_s2, enc, cb, sched.truncated(2), phi);
    for (std::int64_t l = 0; l < sched.boundaries[1]; ++l)
      CHECK(full.tokens.levels[l] == s2.tokens.levels[l]);
  }
}

TEST_CASE("paper preset partition: boundaries (3,6,10) and 3452 tokens") {
  ScaleSchedule paper =
      ScaleSchedule::make({4, 6, 8, 10, 14, 16, 20, 24, 28, 32}, {0.25, 0.5, 1.0});
  CHECK(paper.boundaries == std::vector<std::int64_t>{3, 6, 10});
  CHECK(paper.total_tokens() == 3452);
  CHECK(paper.working_res(1) == 8);
  CHECK(paper.working_res(2) == 16);
}

TEST_CASE("desk preset partition: boundaries (3,5,7)") {
  ScaleSchedule sched = desk_schedule();
  CHECK(sched.boundaries == std::vector<std::int64_t>{3, 5, 7});
  CHECK(sched.total_tokens() == 4 + 9 + 16 + 36 + 64 + 144 + 256);
  CHECK(sched.scale_of_level(1) == 1);
  CHECK(sched.scale_of_level(4) == 2);
  CHECK(sched.scale_of_level(7) == 3);
}

TEST_CASE("partition boundaries follow the argmax rule exactly") {
  Rng rng(41);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::int64_t> rho;
    std::int64_t cur = 1 + rng.uniform_int(0, 2);
    for (int l = 0; l < 6; ++l) {
      rho.push_back(cur);
      cur += rng.uniform_int(1, 4);
    }
    std::int64_t rho_l = rho.back();
    // scales chosen so s*rho_L is integral
    std::vector<double> scales;
    std::int64_t mid = rho[2 + rng.uniform_int(0, 2)];
    scales.push_back(static_cast<double>(mid) / static_cast<double>(rho_l));
    scales.push_back(1.0);
    if (scales[0] >= 1.0) continue;
    ScaleSchedule s = ScaleSchedule::make(rho, scales);
    for (std::size_t n = 0; n < s.scales.size(); ++n) {
      std::int64_t target = s.working_res(static_cast<std::int64_t>(n + 1));
      std::int64_t expect = 0;
      for (std::size_t k = 0; k < rho.size(); ++k)
        if (rho[k] <= target) expect = static_cast<std::int64_t>(k + 1);
      CHECK(s.boundaries[n] == expect);
    }
    CHECK(s.boundaries.back() == static_cast<std::int64_t>(rho.size()));
  }
}

TEST_CASE("schedule validation rejects malformed inputs") {
  CHECK_THROWS_AS(ScaleSchedule::make({4, 3}, {1.0}), Error);
  CHECK_THROWS_AS(ScaleSchedule::make({2, 4}, {0.5, 0.9}), Error);   // last != 1
  CHECK_THROWS_AS(ScaleSchedule::make({2, 4}, {1.5}), Error);        // out of (0,1]
  CHECK_THROWS_AS(ScaleSchedule::make({2, 4}, {0.5, 0.5}), Error);   // not increasing
  CHECK_THROWS_AS(ScaleSchedule::make({8, 16}, {0.25, 1.0}), Error); // scale owns no level
}

TEST_CASE("assemble_latent of a single-level sequence is the upsampled lookup") {
  Rng rng(43);
  Codebook cb = Codebook::random(16, 4, rng, 1.0);
  ScaleSchedule sched = ScaleSchedule::make({3}, {1.0});
  Tensor z = Tensor::randn({4, 3, 3}, rng);
  RqOutputs out = var_rq_tokenize(z, cb, sched, PhiFilter::identity());
  Tensor asm1 = assemble_latent(out.tokens, 1, cb, PhiFilter::identity());
  Tensor direct = lookup_level_map(cb, out.tokens.levels[0], 3);
  CHECK(asm1.values() == direct.values());
}

TEST_CASE("assemble_latent at the last scale equals the tokenizer's cumulative map") {
  Rng rng(47);
  Codebook cb = Codebook::random(32, 6, rng, 0.7);
  ScaleSchedule sched = desk_schedule();
  Tensor z = Tensor::randn({6, 16, 16}, rng);
  PhiFilter phi = PhiFilter::shared_conv(6);
  RqOutputs out = var_rq_tokenize(z, cb, sched, phi);
  Tensor full = assemble_latent(out.tokens, sched.num_scales(), cb, phi);
  REQUIRE(full.numel() == out.cumulative.numel());
  for (std::int64_t i = 0; i < full.numel(); ++i)
    CHECK(full.values()[i] == doctest::Approx(out.cumulative.values()[i]).epsilon(1e-12));
}

TEST_CASE("assemble_latent rejects out-of-range scales") {
  Rng rng(53);
  Codebook cb = Codebook::random(8, 2, rng, 1.0);
  ScaleSchedule sched = ScaleSchedule::make({2, 4}, {0.5, 1.0});
  Tensor z = Tensor::randn({2, 4, 4}, rng);
  RqOutputs out = var_rq_tokenize(z, cb, sched, PhiFilter::identity());
  CHECK_THROWS_AS(assemble_latent(out.tokens, 3, cb, PhiFilter::identity()), Error);
  CHECK_THROWS_AS(assemble_latent(out.tokens, 0, cb, PhiFilter::identity()), Error);
}

TEST_CASE("token files round-trip bit-exactly and validate counts") {
  Rng rng(59);
  Codebook cb = Codebook::random(300, 4, rng, 1.0);  // needs 2-byte varints
  ScaleSchedule sched = desk_schedule();
  Tensor z = Tensor::randn({4, 16, 16}, rng);
  RqOutputs out = var_rq_tokenize(z, cb, sched, PhiFilter::identity());

  auto bytes = serialize_tokens(out.tokens);
  TokenSequence back = deserialize_tokens(bytes);
  CHECK(back == out.tokens);
  CHECK(back.total() == sched.total_tokens());

  auto path = (std::filesystem::temp_directory_path() / "hivar_tokens.hvtk").string();
  write_tokens(path, out.tokens);
  CHECK(read_tokens(path) == out.tokens);
  std::remove(path.c_str());

  auto truncated = bytes;
  truncated.resize(bytes.size() - 7);
  CHECK_THROWS_AS(deserialize_tokens(truncated), ParseError);

  auto trailing = bytes;
  trailing.push_back(0x01);
  CHECK_THROWS_AS(deserialize_tokens(trailing), ParseError);
}

TEST_CASE("hierarchical tokenize validates image and encoder shapes") {
  Rng rng(61);
  Codebook cb = Codebook::random(8, 6, rng, 1.0);
  ScaleSchedule sched = desk_schedule();
  auto enc = stub_encoder(6, 4, 1);
  CHECK_THROWS_AS(
      hierarchical_tokenize(Tensor::zeros({3, 60, 60}), enc, cb, sched, PhiFilter::identity()),
      ShapeError);
  // encoder producing the wrong channel count
  auto bad = stub_encoder(5, 4, 1);
  CHECK_THROWS_AS(
      hierarchical_tokenize(Tensor::zeros({3, 64, 64}), bad, cb, sched, PhiFilter::identity()),
      ShapeError);
}

TEST_CASE("codebook usage counts are explicit and resettable") {
  Rng rng(67);
  Codebook cb = Codebook::random(4, 2, rng, 1.0);
  cb.note_usage({0, 0, 3});
  CHECK(cb.usage()[0] == 2);
  CHECK(cb.usage()[3] == 1);
  cb.reset_usage();
  CHECK(cb.usage()[0] == 0);
}

TEST_CASE("codebook validation flags non-finite entries") {
  Codebook cb(2, 2);
  cb.validate();
  cb.param().tensor.values()[1] = std::nan("");
  CHECK_THROWS_AS(cb.validate(), Error);
}
