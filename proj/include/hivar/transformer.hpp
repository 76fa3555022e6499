#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "hivar/autoencoder.hpp"
#include "hivar/degrade.hpp"
#include "hivar/quantizer.hpp"

namespace hivar {

struct VarConfig {
  std::int64_t depth = 2;
  std::int64_t heads = 4;
  std::int64_t width = 64;
  std::int64_t vocab = 256;  // K
  std::int64_t n_z = 8;
  double dpo_beta = 1.0;
  double cfg_weight = 0.0;
  static constexpr std::int64_t kNumClasses = 3;  // degraded / non-degraded / class-free

  void validate() const;
};

// Block-causal mask over [prefix | level 1 | ... | level L]: a position in
// level i attends to the prefix, all earlier levels, and all of level i.
// Returned as an additive bias matrix (0 or -1e30).
Tensor block_causal_mask(const ScaleSchedule& sched, std::int64_t prefix_len);

// cond + w * (cond - free); w = 0 leaves cond untouched.
Tensor classifier_free_guidance(const Tensor& cond, const Tensor& free, double w);

// Mean negative log-likelihood of the target indices under the logits.
Tensor loss_ce(const Tensor& logits, const std::vector<std::int32_t>& targets);

// -log sigmoid(beta * (log p(z_hr) - log p(z_lr))), both likelihoods read from
// the same teacher-forced logits, computed in log space.
Tensor loss_dpo(const Tensor& logits, const std::vector<std::int32_t>& z_hr,
                const std::vector<std::int32_t>& z_lr, double beta);

struct Sampler {
  enum class Kind { kGreedy, kTopK };
  Kind kind = Kind::kGreedy;
  std::int64_t top_k = 8;
  std::uint64_t seed = 0;
};

// Per-layer attention cache for incremental level-by-level generation.
struct KvCache {
  std::vector<double> k, v;  // [cached_positions * width], growing
};

// Teacher-forcing inputs precomputed from a frozen tokenizer: everything that
// does not depend on the transformer weights.
struct VarSample {
  std::vector<std::int32_t> hr_tokens;        // flattened ground truth
  std::vector<std::int32_t> lr_tokens;        // flattened tokenization of the upsampled LR
  Tensor lr_feature_rows;                     // [rho_L^2, n_z]
  std::vector<Tensor> level_input_rows;       // levels 2..L: [rho_l^2, n_z]
  DegradationClass cls = DegradationClass::kDegraded;
};

// Next-scale autoregressive transformer conditioned on LR encoder features.
class VarModel {
 public:
  VarModel(VarConfig cfg, ScaleSchedule sched, std::uint64_t seed);

  const VarConfig& config() const { return cfg_; }
  const ScaleSchedule& schedule() const { return sched_; }
  std::int64_t prefix_len() const { return 1 + sched_.rho_max() * sched_.rho_max(); }
  std::int64_t sequence_length() const { return prefix_len() + sched_.total_tokens(); }

  // Logits for every token position, [sum rho^2, vocab]. The level-l input
  // map is the downsampled cumulative phi-reconstruction of levels < l
  // (level 1 uses the learned start embedding) plus the positional view.
  Tensor forward_teacher_forced(const VarSample& sample) const;

  // Incremental path. Prime the caches with the conditioning prefix, then
  // feed one level block at a time; each call returns that block's logits.
  std::vector<KvCache> make_caches() const;
  void prime_prefix(std::vector<KvCache>& caches, const Tensor& lr_feature_rows,
                    DegradationClass cls) const;
  Tensor forward_level(std::vector<KvCache>& caches, std::int64_t level,
                       const Tensor& cum_reconstruction) const;

  // Positional-embedding view for 1-based level l: [rho_l^2, width].
  Tensor positional_view(std::int64_t level) const;

  ParamRefs params();

 private:
  Tensor embed_block(std::int64_t level, const Tensor& cum_reconstruction) const;
  Tensor transformer_stack(const Tensor& rows, const Tensor& mask_bias) const;
  Tensor transformer_block_incremental(const Tensor& rows, std::vector<KvCache>& caches) const;
  Tensor head_logits(const Tensor& rows) const;

  struct Layer {
    Parameter ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    Parameter ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  VarConfig cfg_;
  ScaleSchedule sched_;
  Parameter class_emb_;   // [3, width]
  Parameter lr_proj_w_, lr_proj_b_;
  Parameter in_proj_w_, in_proj_b_;
  Parameter start_emb_;   // [1, width]
  Parameter pos_master_;  // [width, rho_L, rho_L], downsampled per level
  std::vector<Layer> layers_;
  Parameter lnf_g_, lnf_b_;
  Parameter head_w_, head_b_;
  Tensor mask_;  // cached additive bias
};

// Precomputes the frozen-tokenizer side of one training pair.
VarSample prepare_var_sample(const Image& hr, const RqvaeModel& rqvae,
                             const DegradationConfig& degradation);

// Builds teacher-forcing level inputs from a token sequence (rows per level
// 2..L, detached).
std::vector<Tensor> level_inputs_from_tokens(const TokenSequence& tokens, const Codebook& cb,
                                             const PhiFilter& phi);

struct VarTrainConfig {
  std::int64_t steps = 1000;
  std::int64_t batch = 4;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.005;
  double dpo_weight = 1.0;  // equal weighting with cross-entropy
  double dpo_beta = 1.0;
  bool use_dpo = true;      // false reproduces the "w/o DPO" ablation arm
  double class_free_prob = 0.1;
  DegradationConfig degradation;
  std::uint64_t seed = 3;
  std::int64_t log_every = 0;
};

struct VarTrainHistory {
  std::vector<double> ce;
  std::vector<double> dpo;
};

VarTrainHistory train_var(VarModel& model, const RqvaeModel& rqvae,
                          const std::vector<Image>& dataset, const VarTrainConfig& cfg,
                          std::ostream* log = nullptr);

struct GenerateResult {
  TokenSequence tokens;
  std::vector<Image> images;  // one per scale 1..upto_scale, coarse to fine
};

// Autoregressive super-resolution: encodes the bilinearly upsampled LR image
// as conditioning, generates level by level with KV caching, and decodes
// every scale boundary up to `upto_scale` in the same pass.
GenerateResult generate(const VarModel& model, const RqvaeModel& rqvae, const Image& lr,
                        DegradationClass cls, std::int64_t upto_scale, const Sampler& sampler,
                        double cfg_weight = 0.0);

}  // namespace hivar
