#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "hivar/autoencoder.hpp"
#include "hivar/resample.hpp"
#include "hivar/synth.hpp"

using namespace hivar;

namespace {

// Small model used across these tests: 16x16 images, latent 4x4.
RqvaeModel tiny_model(std::uint64_t seed = 5) {
  AutoencoderConfig cfg;
  cfg.n_z = 4;
  cfg.base_width = 8;
  cfg.stages = 2;
  cfg.norm_groups = 2;
  ScaleSchedule sched = ScaleSchedule::make({2, 4}, {0.5, 1.0});
  return RqvaeModel(cfg, sched, /*vocab=*/32, seed);
}

std::vector<Image> tiny_dataset(std::int64_t count, std::int64_t res, std::uint64_t seed) {
  SyntheticDatasetSpec spec;
  spec.count = count;
  spec.resolution = res;
  spec.seed = seed;
  return synth_dataset(spec);
}

}  // namespace

TEST_CASE("encode maps a 64x64 image to a 16x16 grid at f=0.25") {
  AutoencoderConfig cfg;
  cfg.n_z = 6;
  cfg.base_width = 8;
  cfg.stages = 2;
  cfg.norm_groups = 2;
  CHECK(cfg.f() == 0.25);
  ScaleSchedule sched = ScaleSchedule::make({2, 3, 4, 6, 8, 12, 16}, {0.25, 0.5, 1.0});
  RqvaeModel model(cfg, sched, 16, 1);
  Rng rng(3);
  Tensor img = Tensor::uniform({3, 64, 64}, rng, 0.0, 1.0);
  Tensor z = model.encode(img);
  CHECK(z.shape() == Shape{6, 16, 16});
}

TEST_CASE("encode is deterministic in eval mode") {
  RqvaeModel model = tiny_model();
  Rng rng(5);
  Tensor img = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  CHECK(model.encode(img).values() == model.encode(img).values());
}

TEST_CASE("encode rejects inputs not divisible by 1/f") {
  RqvaeModel model = tiny_model();
  CHECK_THROWS_AS(model.encode(Tensor::zeros({3, 18, 16})), ShapeError);
}

TEST_CASE("decode_scale shape contract holds for every scale") {
  RqvaeModel model = tiny_model();
  Rng rng(7);
  Tensor img = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  HierarchicalOutputs h = model.tokenize(img);
  for (std::int64_t n = 1; n <= model.schedule().num_scales(); ++n) {
    Tensor out = model.decode_scale(h.scale_latents[n - 1], n);
    std::int64_t side = model.schedule().working_res(n) * model.config().down_factor();
    CHECK(out.shape() == Shape{3, side, side});
    Image im = model.decode_scale_image(h.scale_latents[n - 1], n);
    for (double v : im.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("decode_scale rejects wrong spatial sizes and scale indices") {
  RqvaeModel model = tiny_model();
  CHECK_THROWS_AS(model.decode_scale(Tensor::zeros({4, 3, 3}), 2), ShapeError);
  CHECK_THROWS_AS(model.decode_scale(Tensor::zeros({4, 4, 4}), 3), Error);
}

TEST_CASE("straight_through forwards r and backpropagates to z unchanged") {
  Rng rng(9);
  Tensor z = Tensor::uniform({5}, rng, -1.0, 1.0).set_requires_grad(true);
  Tensor r = Tensor::uniform({5}, rng, -1.0, 1.0);
  Tensor st = straight_through(z, r);
  CHECK(st.values() == r.values());
  backward(sum_all(mul(st, st)));
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(z.grad()[i] == doctest::Approx(2.0 * r.values()[i]).epsilon(1e-12));
}

TEST_CASE("commitment term vanishes when z equals the codebook entry") {
  Tensor z = Tensor::from_data({3}, {0.5, -0.25, 1.0});
  Tensor commit = sum_sq(sub(z, stopgrad(z.clone_detached())));
  CHECK(commit.item() == 0.0);
}

TEST_CASE("train_rqvae with quantization drop forced to 1 is a pure autoencoder") {
  RqvaeModel model = tiny_model(11);
  auto data = tiny_dataset(64, 16, 21);
  RqvaeTrainConfig cfg;
  cfg.steps = 500;
  cfg.batch = 4;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  cfg.quant_drop_prob = 1.0;
  auto history = train_rqvae(model, data, cfg);
  REQUIRE(history.size() == 500);
  CHECK(history.back().total < history.front().total);
  for (const auto& h : history) CHECK(h.commitment == 0.0);  // quantizer never runs
}

TEST_CASE("train_rqvae with drop probability 0 exercises the straight-through path") {
  RqvaeModel model = tiny_model(13);
  auto data = tiny_dataset(8, 16, 23);
  std::vector<double> cb_before = model.codebook().param().tensor.values();
  RqvaeTrainConfig cfg;
  cfg.steps = 5;
  cfg.batch = 4;
  cfg.quant_drop_prob = 0.0;
  auto history = train_rqvae(model, data, cfg);
  CHECK(history.back().commitment > 0.0);
  // codebook-side commitment moved the vocabulary
  CHECK(model.codebook().param().tensor.values() != cb_before);
  // report invariant: total = sum of parts
  for (const auto& h : history) {
    double sum = h.commitment;
    for (double r : h.per_scale_recon) sum += r;
    CHECK(h.total == doctest::Approx(sum).epsilon(1e-9));
  }
}

TEST_CASE("train_rqvae validates the dataset") {
  RqvaeModel model = tiny_model();
  CHECK_THROWS_AS(train_rqvae(model, {}, {}), Error);
  auto wrong = tiny_dataset(2, 32, 1);
  CHECK_THROWS_AS(train_rqvae(model, wrong, {}), ShapeError);
}

TEST_CASE("finetune_vocabulary keeps frozen decoders bit-identical and only moves the codebook") {
  RqvaeModel model = tiny_model(17);
  auto data = tiny_dataset(8, 16, 29);

  // must refuse while decoders are trainable
  CHECK_THROWS_AS(finetune_vocabulary(model, data, {}), Error);

  model.set_decoders_trainable(false);
  std::vector<std::vector<double>> dec_before;
  for (auto* p : model.decoder_params()) dec_before.push_back(p->tensor.values());
  std::vector<double> enc_before = model.encoder_params()[0]->tensor.values();

  VocabFinetuneConfig cfg;
  cfg.steps = 200;
  cfg.batch = 8;
  cfg.lr = 2e-3;
  auto history = finetune_vocabulary(model, data, cfg);
  REQUIRE(history.size() == 200);
  CHECK(history.back() < history.front());

  auto dec_params = model.decoder_params();
  for (std::size_t i = 0; i < dec_params.size(); ++i)
    CHECK(dec_params[i]->tensor.values() == dec_before[i]);
  CHECK(model.encoder_params()[0]->tensor.values() == enc_before);
  // encoder params are trainable again after the call
  CHECK(model.encoder_params()[0]->trainable);
}

TEST_CASE("alignment-loss gradient w.r.t. the codebook matches finite differences") {
  RqvaeModel model = tiny_model(19);
  Rng rng(31);
  Tensor img = Tensor::uniform({3, 16, 16}, rng, 0.0, 1.0);
  // tokens fixed at the current vocabulary; the objective re-looks-up entries
  HierarchicalOutputs h = model.tokenize(img);
  std::vector<Tensor> feats;
  for (auto& f : h.scale_features) feats.push_back(f.clone_detached());
  TokenSequence tokens = h.tokens;

  Tensor cb = model.codebook().param().tensor;
  double worst = hivar_test::gradcheck({cb}, [&] {
    Tensor loss = Tensor::scalar(0.0);
    for (std::int64_t n = 1; n <= model.schedule().num_scales(); ++n)
      loss = add(loss, mse(feats[n - 1], assemble_latent(tokens, n, model.codebook(),
                                                         model.phi())));
    return loss;
  });
  CHECK(worst < 1e-6);
}
