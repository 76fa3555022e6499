#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "hivar/degrade.hpp"
#include "hivar/image.hpp"
#include "hivar/quantizer.hpp"

namespace hivar {

struct AutoencoderConfig {
  std::int64_t n_z = 8;
  std::int64_t base_width = 16;
  std::int64_t stages = 2;  // stride-2 downsamples; compression f = 2^-stages
  std::int64_t norm_groups = 4;

  double f() const { return 1.0 / static_cast<double>(std::int64_t{1} << stages); }
  std::int64_t down_factor() const { return std::int64_t{1} << stages; }
};

namespace nn {

struct Conv {
  Parameter w, b;
  std::int64_t stride = 1, pad = 0;
  Conv() = default;
  Conv(const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k,
       std::int64_t stride, std::int64_t pad, Rng& rng);
  Tensor apply(const Tensor& x) const { return conv2d(x, w.tensor, b.tensor, stride, pad); }
  void collect(ParamRefs& out);
};

struct GroupNormLayer {
  Parameter gamma, beta;
  std::int64_t groups = 1;
  GroupNormLayer() = default;
  GroupNormLayer(const std::string& name, std::int64_t channels, std::int64_t groups);
  Tensor apply(const Tensor& x) const {
    return group_norm(x, groups, gamma.tensor, beta.tensor);
  }
  void collect(ParamRefs& out);
};

struct ResBlock {
  GroupNormLayer gn1, gn2;
  Conv conv1, conv2;
  ResBlock() = default;
  ResBlock(const std::string& name, std::int64_t channels, std::int64_t groups, Rng& rng);
  Tensor apply(const Tensor& x) const;
  void collect(ParamRefs& out);
};

}  // namespace nn

// Convolutional encoder E: stem, `stages` stride-2 downsamples with residual
// blocks, 1x1 head to n_z channels.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const AutoencoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& image) const;  // [3,H,W] -> [n_z, fH, fW]
  void collect(ParamRefs& out);

 private:
  AutoencoderConfig cfg_;
  nn::Conv stem_;
  std::vector<nn::Conv> downs_;
  std::vector<nn::ResBlock> blocks_;
  nn::Conv head_;
};

// Scale-specific decoder D_n, mirroring the encoder.
class ScaleDecoder {
 public:
  ScaleDecoder() = default;
  ScaleDecoder(const std::string& name, const AutoencoderConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& latent) const;  // [n_z,h,w] -> [3, h/f, w/f]
  void collect(ParamRefs& out);
  void set_trainable(bool v);
  ParamRefs params();

 private:
  AutoencoderConfig cfg_;
  nn::Conv head_;
  nn::ResBlock block_;
  std::vector<nn::Conv> ups_;
  nn::Conv tail_;
};

// Hierarchical RQ-VAE: encoder, codebook, phi, and one decoder per target
// scale.
class RqvaeModel {
 public:
  RqvaeModel(AutoencoderConfig cfg, ScaleSchedule sched, std::int64_t vocab,
             std::uint64_t seed);

  const AutoencoderConfig& config() const { return cfg_; }
  const ScaleSchedule& schedule() const { return sched_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }
  PhiFilter& phi() { return phi_; }
  const PhiFilter& phi() const { return phi_; }

  // Deterministic in eval mode; errors on inputs not divisible by 1/f.
  Tensor encode(const Tensor& image) const;
  EncodeFn encode_fn() const;

  // latent spatial size must equal s_n * rho_L; output tensor is unclamped.
  Tensor decode_scale(const Tensor& latent, std::int64_t n) const;
  Image decode_scale_image(const Tensor& latent, std::int64_t n) const;

  HierarchicalOutputs tokenize(const Tensor& image, bool straight_through = false) const;

  ParamRefs all_params();
  ParamRefs decoder_params();
  ParamRefs encoder_params();
  void set_decoders_trainable(bool v);
  bool decoders_frozen();

  // Native image side consistent with the schedule: rho_L / f.
  std::int64_t native_side() const { return sched_.rho_max() * cfg_.down_factor(); }

 private:
  AutoencoderConfig cfg_;
  ScaleSchedule sched_;
  Encoder encoder_;
  std::vector<ScaleDecoder> decoders_;
  Codebook codebook_;
  PhiFilter phi_;
};

struct RqvaeLossReport {
  std::vector<double> per_scale_recon;  // l2 + weighted edge term, one per scale
  double commitment = 0;
  double total = 0;
};

struct RqvaeTrainConfig {
  std::int64_t steps = 500;
  std::int64_t batch = 8;
  double lr = 2.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  double quant_drop_prob = 0.5;  // probability of bypassing quantization
  double edge_weight = 5.0;      // perceptual-substitute weight
  double commit_weight = 0.25;   // encoder-side commitment
  double dict_weight = 1.0;      // codebook-side term
  std::uint64_t seed = 1;
  std::int64_t log_every = 0;
};

// Optimizes reconstruction at every scale; each sample flips a coin with
// quant_drop_prob to bypass quantization and feed encoder features straight
// to the decoders. Dead codebook entries are re-seeded to random encoder
// outputs after each epoch. Throws DivergenceError on non-finite losses.
std::vector<RqvaeLossReport> train_rqvae(RqvaeModel& model, const std::vector<Image>& dataset,
                                         const RqvaeTrainConfig& cfg,
                                         std::ostream* log = nullptr);

struct VocabFinetuneConfig {
  std::int64_t steps = 200;
  std::int64_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 2;
  std::int64_t log_every = 0;
};

// Updates only the codebook, driven by the l2 distance between per-scale
// encoder features and the assembled token embeddings. Decoders must already
// be frozen; encoder and phi are frozen for the duration.
std::vector<double> finetune_vocabulary(RqvaeModel& model, const std::vector<Image>& dataset,
                                        const VocabFinetuneConfig& cfg,
                                        std::ostream* log = nullptr);

}  // namespace hivar
