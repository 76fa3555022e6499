#include "hivar/autoencoder.hpp"

#include <cmath>

#include "hivar/resample.hpp"

namespace hivar {

namespace nn {

Conv::Conv(const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k,
           std::int64_t stride_, std::int64_t pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  double std_dev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  w = Parameter(name + ".w", Tensor::randn({out, in, k, k}, rng, std_dev));
  b = Parameter(name + ".b", Tensor::zeros({out}));
}

void Conv::collect(ParamRefs& out) {
  out.push_back(&w);
  out.push_back(&b);
}

GroupNormLayer::GroupNormLayer(const std::string& name, std::int64_t channels,
                               std::int64_t groups_)
    : groups(groups_) {
  gamma = Parameter(name + ".gamma", Tensor::full({channels}, 1.0));
  beta = Parameter(name + ".beta", Tensor::zeros({channels}));
}

void GroupNormLayer::collect(ParamRefs& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

ResBlock::ResBlock(const std::string& name, std::int64_t channels, std::int64_t groups,
                   Rng& rng)
    : gn1(name + ".gn1", channels, groups),
      gn2(name + ".gn2", channels, groups),
      conv1(name + ".conv1", channels, channels, 3, 1, 1, rng),
      conv2(name + ".conv2", channels, channels, 3, 1, 1, rng) {}

Tensor ResBlock::apply(const Tensor& x) const {
  Tensor h = conv1.apply(gelu(gn1.apply(x)));
  h = conv2.apply(gelu(gn2.apply(h)));
  return add(x, h);
}

void ResBlock::collect(ParamRefs& out) {
  gn1.collect(out);
  gn2.collect(out);
  conv1.collect(out);
  conv2.collect(out);
}

}  // namespace nn

Encoder::Encoder(const AutoencoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  stem_ = nn::Conv("encoder.stem", 3, cfg.base_width, 3, 1, 1, rng);
  std::int64_t ch = cfg.base_width;
  for (std::int64_t s = 0; s < cfg.stages; ++s) {
    std::string name = "encoder.stage" + std::to_string(s);
    downs_.emplace_back(name + ".down", ch, ch * 2, 3, 2, 1, rng);
    ch *= 2;
    blocks_.emplace_back(name + ".res", ch, cfg.norm_groups, rng);
  }
  head_ = nn::Conv("encoder.head", ch, cfg.n_z, 1, 1, 0, rng);
}

Tensor Encoder::forward(const Tensor& image) const {
  if (image.shape().size() != 3 || image.dim(0) != 3)
    throw ShapeError("encode: expected [3,H,W], got " + shape_str(image.shape()));
  std::int64_t div = cfg_.down_factor();
  if (image.dim(1) % div != 0 || image.dim(2) % div != 0)
    throw ShapeError("encode: input " + shape_str(image.shape()) + " not divisible by 1/f=" +
                     std::to_string(div));
  Tensor h = stem_.apply(image);
  for (std::size_t s = 0; s < downs_.size(); ++s) {
    h = gelu(downs_[s].apply(h));
    h = blocks_[s].apply(h);
  }
  return head_.apply(h);
}

void Encoder::collect(ParamRefs& out) {
  stem_.collect(out);
  for (auto& d : downs_) d.collect(out);
  for (auto& r : blocks_) r.collect(out);
  head_.collect(out);
}

ScaleDecoder::ScaleDecoder(const std::string& name, const AutoencoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  std::int64_t top = cfg.base_width << cfg.stages;
  head_ = nn::Conv(name + ".head", cfg.n_z, top, 1, 1, 0, rng);
  block_ = nn::ResBlock(name + ".res", top, cfg.norm_groups, rng);
  std::int64_t ch = top;
  for (std::int64_t s = 0; s < cfg.stages; ++s) {
    ups_.emplace_back(name + ".up" + std::to_string(s), ch, ch / 2, 3, 1, 1, rng);
    ch /= 2;
  }
  tail_ = nn::Conv(name + ".tail", ch, 3, 3, 1, 1, rng);
}

Tensor ScaleDecoder::forward(const Tensor& latent) const {
  Tensor h = head_.apply(latent);
  h = block_.apply(h);
  for (const auto& up : ups_) {
    h = resize(h, h.dim(1) * 2, h.dim(2) * 2, ResampleMode::kArea);
    h = gelu(up.apply(h));
  }
  return tail_.apply(h);
}

void ScaleDecoder::collect(ParamRefs& out) {
  head_.collect(out);
  block_.collect(out);
  for (auto& u : ups_) u.collect(out);
  tail_.collect(out);
}

ParamRefs ScaleDecoder::params() {
  ParamRefs out;
  collect(out);
  return out;
}

void ScaleDecoder::set_trainable(bool v) {
  for (auto* p : params()) p->set_trainable(v);
}

RqvaeModel::RqvaeModel(AutoencoderConfig cfg, ScaleSchedule sched, std::int64_t vocab,
                       std::uint64_t seed)
    : cfg_(cfg), sched_(std::move(sched)), codebook_(vocab, cfg.n_z) {
  Rng rng = Rng::substream(seed, 0x4145);  // "AE"
  encoder_ = Encoder(cfg_, rng);
  for (std::int64_t n = 1; n <= sched_.num_scales(); ++n)
    decoders_.emplace_back("decoder" + std::to_string(n), cfg_, rng);
  Rng crng = Rng::substream(seed, 0x4342);  // "CB"
  codebook_ = Codebook::random(vocab, cfg_.n_z, crng, 1.0 / std::sqrt(double(cfg_.n_z)));
  phi_ = PhiFilter::shared_conv(cfg_.n_z);
}

Tensor RqvaeModel::encode(const Tensor& image) const { return encoder_.forward(image); }

EncodeFn RqvaeModel::encode_fn() const {
  return [this](const Tensor& img) { return encoder_.forward(img); };
}

Tensor RqvaeModel::decode_scale(const Tensor& latent, std::int64_t n) const {
  if (n < 1 || n > sched_.num_scales())
    throw Error("decode_scale: scale " + std::to_string(n) + " out of range 1.." +
                std::to_string(sched_.num_scales()));
  std::int64_t want = sched_.working_res(n);
  if (latent.shape().size() != 3 || latent.dim(0) != cfg_.n_z || latent.dim(1) != want ||
      latent.dim(2) != want)
    throw ShapeError("decode_scale: latent " + shape_str(latent.shape()) + " but scale " +
                     std::to_string(n) + " expects [" + std::to_string(cfg_.n_z) + "," +
                     std::to_string(want) + "," + std::to_string(want) + "]");
  return decoders_[n - 1].forward(latent);
}

Image RqvaeModel::decode_scale_image(const Tensor& latent, std::int64_t n) const {
  return Image::from_tensor(decode_scale(latent, n), /*clamp=*/true);
}

HierarchicalOutputs RqvaeModel::tokenize(const Tensor& image, bool straight_through) const {
  TokenizeOptions opt;
  opt.straight_through = straight_through;
  return hierarchical_tokenize(image, encode_fn(), codebook_, sched_, phi_, opt);
}

ParamRefs RqvaeModel::all_params() {
  ParamRefs out;
  encoder_.collect(out);
  for (auto& d : decoders_) d.collect(out);
  for (auto* p : phi_.params()) out.push_back(p);
  out.push_back(&codebook_.param());
  return out;
}

ParamRefs RqvaeModel::decoder_params() {
  ParamRefs out;
  for (auto& d : decoders_) d.collect(out);
  return out;
}

ParamRefs RqvaeModel::encoder_params() {
  ParamRefs out;
  encoder_.collect(out);
  return out;
}

void RqvaeModel::set_decoders_trainable(bool v) {
  for (auto& d : decoders_) d.set_trainable(v);
}

bool RqvaeModel::decoders_frozen() {
  for (auto* p : decoder_params())
    if (p->trainable) return false;
  return true;
}

namespace {

// Reservoir of encoder-feature pixels used to re-seed dead codebook entries.
class FeatureReservoir {
 public:
  FeatureReservoir(std::int64_t n_z, std::size_t cap) : n_z_(n_z), cap_(cap) {}

  void offer(const Tensor& features, Rng& rng) {
    std::int64_t hw = features.dim(1) * features.dim(2);
    std::int64_t pixel = rng.uniform_int(0, hw - 1);
    std::vector<double> v(static_cast<std::size_t>(n_z_));
    for (std::int64_t c = 0; c < n_z_; ++c) v[c] = features.values()[c * hw + pixel];
    if (pool_.size() < cap_) {
      pool_.push_back(std::move(v));
    } else {
      std::size_t slot = static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(cap_) - 1));
      pool_[slot] = std::move(v);
    }
  }

  bool empty() const { return pool_.empty(); }

  const std::vector<double>& sample(Rng& rng) const {
    return pool_[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(pool_.size()) - 1))];
  }

 private:
  std::int64_t n_z_;
  std::size_t cap_;
  std::vector<std::vector<double>> pool_;
};

void reseed_dead_entries(Codebook& cb, const FeatureReservoir& pool, Rng& rng,
                         std::ostream* log) {
  if (pool.empty()) return;
  std::int64_t reseeded = 0;
  for (std::int64_t i = 0; i < cb.size(); ++i) {
    if (cb.usage()[static_cast<std::size_t>(i)] != 0) continue;
    const auto& v = pool.sample(rng);
    double* row = cb.param().tensor.data() + i * cb.dim();
    for (std::int64_t c = 0; c < cb.dim(); ++c) row[c] = v[c];
    ++reseeded;
  }
  cb.reset_usage();
  if (log && reseeded > 0) *log << "  reseeded " << reseeded << " dead codebook entries\n";
}

}  // namespace

std::vector<RqvaeLossReport> train_rqvae(RqvaeModel& model, const std::vector<Image>& dataset,
                                         const RqvaeTrainConfig& cfg, std::ostream* log) {
  if (dataset.empty()) throw Error("train_rqvae: empty dataset");
  std::int64_t side = model.native_side();
  for (const auto& img : dataset)
    if (img.height != side || img.width != side)
      throw ShapeError("train_rqvae: dataset image " + std::to_string(img.height) + "x" +
                       std::to_string(img.width) + " but the schedule implies " +
                       std::to_string(side));

  const ScaleSchedule& sched = model.schedule();
  std::int64_t num_scales = sched.num_scales();
  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(model.all_params(), ocfg);

  Rng coin_rng = Rng::substream(cfg.seed, 2);
  Rng reseed_rng = Rng::substream(cfg.seed, 3);

  // cache image tensors and per-scale targets
  std::vector<Tensor> images;
  std::vector<std::vector<Tensor>> targets(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    images.push_back(dataset[i].to_tensor());
    for (std::int64_t n = 1; n <= num_scales; ++n) {
      std::int64_t ts = sched.working_res(n) * model.config().down_factor();
      targets[i].push_back(resize(images[i], ts, ts, ResampleMode::kArea));
    }
  }

  FeatureReservoir reservoir(model.config().n_z, 512);
  std::vector<RqvaeLossReport> history;
  std::int64_t steps_per_epoch =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(dataset.size()) / cfg.batch);
  model.codebook().reset_usage();

  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    RqvaeLossReport report;
    report.per_scale_recon.assign(static_cast<std::size_t>(num_scales), 0.0);
    Tensor batch_loss = Tensor::scalar(0.0);

    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      std::size_t pick = static_cast<std::size_t>((step * cfg.batch + b) %
                                                  static_cast<std::int64_t>(dataset.size()));
      bool drop_quant = coin_rng.bernoulli(cfg.quant_drop_prob);
      Tensor sample_loss = Tensor::scalar(0.0);

      if (drop_quant) {
        // hybrid path: encoder features straight to the decoders
        for (std::int64_t n = 1; n <= num_scales; ++n) {
          std::int64_t ts = sched.working_res(n) * model.config().down_factor();
          Tensor feat = model.encode(resize(images[pick], ts, ts, ResampleMode::kArea));
          reservoir.offer(feat, reseed_rng);
          Tensor recon = model.decode_scale(feat, n);
          Tensor rl = add(mse(recon, targets[pick][n - 1]),
                          scale(edge_l1(recon, targets[pick][n - 1]), cfg.edge_weight));
          report.per_scale_recon[n - 1] += rl.item();
          sample_loss = add(sample_loss, rl);
        }
      } else {
        HierarchicalOutputs h = model.tokenize(images[pick], /*straight_through=*/true);
        model.codebook().note_usage(h.tokens.flat());
        for (std::int64_t n = 1; n <= num_scales; ++n) {
          reservoir.offer(h.scale_features[n - 1], reseed_rng);
          Tensor recon = model.decode_scale(h.scale_latents[n - 1], n);
          Tensor rl = add(mse(recon, targets[pick][n - 1]),
                          scale(edge_l1(recon, targets[pick][n - 1]), cfg.edge_weight));
          report.per_scale_recon[n - 1] += rl.item();
          sample_loss = add(sample_loss, rl);
        }
        Tensor commit = add(scale(h.commit_encoder, cfg.commit_weight),
                            scale(h.commit_codebook, cfg.dict_weight));
        report.commitment += commit.item();
        sample_loss = add(sample_loss, commit);
      }
      batch_loss = add(batch_loss, sample_loss);
    }

    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(cfg.batch));
    report.total = batch_loss.item();
    for (auto& v : report.per_scale_recon) v /= static_cast<double>(cfg.batch);
    report.commitment /= static_cast<double>(cfg.batch);
    if (!std::isfinite(report.total))
      throw DivergenceError("train_rqvae: non-finite loss at step " + std::to_string(step) +
                            " (total=" + std::to_string(report.total) + ")");
    backward(batch_loss);
    // quantizer parameters sit out of pure-autoencoder steps; they update with
    // an explicit zero gradient
    for (auto* p : model.all_params())
      if (p->trainable && !p->tensor.has_grad()) p->tensor.grad_mut();
    opt.step();
    history.push_back(std::move(report));

    if ((step + 1) % steps_per_epoch == 0)
      reseed_dead_entries(model.codebook(), reservoir, reseed_rng, log);
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      *log << "rqvae step " << step << " loss " << history.back().total << "\n";
  }
  return history;
}

std::vector<double> finetune_vocabulary(RqvaeModel& model, const std::vector<Image>& dataset,
                                        const VocabFinetuneConfig& cfg, std::ostream* log) {
  if (dataset.empty()) throw Error("finetune_vocabulary: empty dataset");
  if (!model.decoders_frozen())
    throw Error("finetune_vocabulary: decoders must be frozen before the vocabulary update");

  // Only the codebook trains; every other parameter is frozen for the
  // duration and restored afterwards.
  ParamRefs frozen;
  std::vector<bool> saved;
  for (auto* p : model.encoder_params()) frozen.push_back(p);
  for (auto* p : model.phi().params()) frozen.push_back(p);
  for (auto* p : frozen) {
    saved.push_back(p->trainable);
    p->set_trainable(false);
  }

  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  AdamW opt({&model.codebook().param()}, ocfg);

  std::vector<Tensor> images;
  for (const auto& img : dataset) images.push_back(img.to_tensor());
  std::int64_t num_scales = model.schedule().num_scales();

  std::vector<double> history;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    Tensor loss = Tensor::scalar(0.0);
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      std::size_t pick = static_cast<std::size_t>((step * cfg.batch + b) %
                                                  static_cast<std::int64_t>(dataset.size()));
      HierarchicalOutputs h = model.tokenize(images[pick], /*straight_through=*/false);
      for (std::int64_t n = 1; n <= num_scales; ++n)
        loss = add(loss, mse(stopgrad(h.scale_features[n - 1]), h.scale_latents[n - 1]));
    }
    loss = scale(loss, 1.0 / static_cast<double>(cfg.batch));
    double v = loss.item();
    if (!std::isfinite(v))
      throw DivergenceError("finetune_vocabulary: non-finite loss at step " +
                            std::to_string(step));
    backward(loss);
    opt.step();
    history.push_back(v);
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      *log << "vocab step " << step << " align " << v << "\n";
  }

  for (std::size_t i = 0; i < frozen.size(); ++i) frozen[i]->set_trainable(saved[i]);
  return history;
}

}  // namespace hivar
