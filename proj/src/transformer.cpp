#include "hivar/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "hivar/resample.hpp"

namespace hivar {

void VarConfig::validate() const {
  if (width % heads != 0)
    throw Error("var config: width " + std::to_string(width) + " not divisible by " +
                std::to_string(heads) + " heads");
  if (depth < 1 || vocab < 2 || n_z < 1) throw Error("var config: malformed dimensions");
}

Tensor block_causal_mask(const ScaleSchedule& sched, std::int64_t prefix_len) {
  std::int64_t s = prefix_len + sched.total_tokens();
  std::vector<std::int32_t> block(static_cast<std::size_t>(s), 0);
  std::int64_t pos = prefix_len;
  for (std::int64_t l = 1; l <= sched.levels(); ++l) {
    std::int64_t n = sched.rho(l) * sched.rho(l);
    for (std::int64_t i = 0; i < n; ++i) block[pos++] = static_cast<std::int32_t>(l);
  }
  Tensor mask = Tensor::zeros({s, s});
  double* m = mask.data();
  for (std::int64_t q = 0; q < s; ++q)
    for (std::int64_t k = 0; k < s; ++k)
      if (block[k] > block[q]) m[q * s + k] = -1e30;
  return mask;
}

Tensor classifier_free_guidance(const Tensor& cond, const Tensor& free, double w) {
  if (w == 0.0) return cond;
  return add(cond, scale(sub(cond, free), w));
}

Tensor loss_ce(const Tensor& logits, const std::vector<std::int32_t>& targets) {
  if (logits.shape().size() != 2 ||
      logits.dim(0) != static_cast<std::int64_t>(targets.size()))
    throw ShapeError("loss_ce: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  Tensor ls = log_softmax_rows(logits);
  return neg(mean_all(pick(ls, targets)));
}

Tensor loss_dpo(const Tensor& logits, const std::vector<std::int32_t>& z_hr,
                const std::vector<std::int32_t>& z_lr, double beta) {
  if (z_hr.size() != z_lr.size())
    throw ShapeError("loss_dpo: sequence lengths differ: " + std::to_string(z_hr.size()) +
                     " vs " + std::to_string(z_lr.size()));
  if (logits.shape().size() != 2 || logits.dim(0) != static_cast<std::int64_t>(z_hr.size()))
    throw ShapeError("loss_dpo: " + std::to_string(z_hr.size()) + " positions for logits " +
                     shape_str(logits.shape()));
  Tensor ls = log_softmax_rows(logits);
  Tensor delta = sub(sum_all(pick(ls, z_hr)), sum_all(pick(ls, z_lr)));
  return softplus(scale(delta, -beta));
}

namespace {

Parameter make_w(const std::string& name, Shape shape, Rng& rng, double stddev = 0.02) {
  return Parameter(name, Tensor::randn(std::move(shape), rng, stddev));
}

Parameter make_zeros(const std::string& name, Shape shape) {
  return Parameter(name, Tensor::zeros(std::move(shape)));
}

Parameter make_ones(const std::string& name, Shape shape) {
  return Parameter(name, Tensor::full(std::move(shape), 1.0));
}

}  // namespace

VarModel::VarModel(VarConfig cfg, ScaleSchedule sched, std::uint64_t seed)
    : cfg_(cfg), sched_(std::move(sched)) {
  cfg_.validate();
  Rng rng = Rng::substream(seed, 0x564152);  // "VAR"
  std::int64_t w = cfg_.width;
  std::int64_t rho_l = sched_.rho_max();
  class_emb_ = make_w("var.class_emb", {VarConfig::kNumClasses, w}, rng);
  lr_proj_w_ = make_w("var.lr_proj.w", {cfg_.n_z, w}, rng);
  lr_proj_b_ = make_zeros("var.lr_proj.b", {w});
  in_proj_w_ = make_w("var.in_proj.w", {cfg_.n_z, w}, rng);
  in_proj_b_ = make_zeros("var.in_proj.b", {w});
  start_emb_ = make_w("var.start_emb", {1, w}, rng);
  pos_master_ = make_w("var.pos_master", {w, rho_l, rho_l}, rng);
  double resid_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.depth));
  for (std::int64_t d = 0; d < cfg_.depth; ++d) {
    std::string p = "var.layer" + std::to_string(d);
    layers_.push_back(Layer{
        make_ones(p + ".ln1.g", {w}), make_zeros(p + ".ln1.b", {w}),
        make_w(p + ".qkv.w", {w, 3 * w}, rng), make_zeros(p + ".qkv.b", {3 * w}),
        make_w(p + ".proj.w", {w, w}, rng, resid_std), make_zeros(p + ".proj.b", {w}),
        make_ones(p + ".ln2.g", {w}), make_zeros(p + ".ln2.b", {w}),
        make_w(p + ".fc1.w", {w, 4 * w}, rng), make_zeros(p + ".fc1.b", {4 * w}),
        make_w(p + ".fc2.w", {4 * w, w}, rng, resid_std), make_zeros(p + ".fc2.b", {w}),
    });
  }
  lnf_g_ = make_ones("var.lnf.g", {w});
  lnf_b_ = make_zeros("var.lnf.b", {w});
  head_w_ = make_w("var.head.w", {w, cfg_.vocab}, rng);
  head_b_ = make_zeros("var.head.b", {cfg_.vocab});
}

ParamRefs VarModel::params() {
  ParamRefs out{&class_emb_, &lr_proj_w_, &lr_proj_b_, &in_proj_w_, &in_proj_b_,
                &start_emb_, &pos_master_};
  for (auto& l : layers_) {
    for (Parameter* p : {&l.ln1_g, &l.ln1_b, &l.qkv_w, &l.qkv_b, &l.proj_w, &l.proj_b,
                         &l.ln2_g, &l.ln2_b, &l.fc1_w, &l.fc1_b, &l.fc2_w, &l.fc2_b})
      out.push_back(p);
  }
  out.push_back(&lnf_g_);
  out.push_back(&lnf_b_);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

Tensor VarModel::positional_view(std::int64_t level) const {
  std::int64_t rho = sched_.rho(level);
  Tensor view = resize(pos_master_.tensor, rho, rho, ResampleMode::kArea);
  return chw_to_rows(view);
}

Tensor VarModel::embed_block(std::int64_t level, const Tensor& cum) const {
  std::int64_t rho = sched_.rho(level);
  Tensor rows;
  if (level == 1) {
    rows = tile_rows(start_emb_.tensor, rho * rho);
  } else {
    Tensor down = resize(cum, rho, rho, ResampleMode::kArea);
    rows = linear(chw_to_rows(down), in_proj_w_.tensor, in_proj_b_.tensor);
  }
  return add(rows, positional_view(level));
}

namespace {

// Multi-head attention over explicit K/V tensors; `mask` may be undefined for
// the incremental path (everything cached is attendable).
Tensor attention(const Tensor& k_all, const Tensor& v_all, const Tensor& q_all,
                 std::int64_t heads, const Tensor& mask) {
  std::int64_t dh = q_all.dim(1) / heads;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (std::int64_t h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q_all, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k_all, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v_all, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul_nt(qh, kh), att_scale);
    if (mask.defined()) scores = add(scores, mask);
    ctx.push_back(matmul(softmax_rows(scores), vh));
  }
  return concat_cols(ctx);
}

}  // namespace

Tensor VarModel::transformer_stack(const Tensor& rows, const Tensor& mask_bias) const {
  Tensor x = rows;
  for (const auto& l : layers_) {
    Tensor h = layer_norm(x, l.ln1_g.tensor, l.ln1_b.tensor);
    Tensor qkv = linear(h, l.qkv_w.tensor, l.qkv_b.tensor);
    std::int64_t w = cfg_.width;
    Tensor q = slice_cols(qkv, 0, w);
    Tensor k = slice_cols(qkv, w, 2 * w);
    Tensor v = slice_cols(qkv, 2 * w, 3 * w);
    Tensor att = attention(k, v, q, cfg_.heads, mask_bias);
    x = add(x, linear(att, l.proj_w.tensor, l.proj_b.tensor));
    Tensor m = layer_norm(x, l.ln2_g.tensor, l.ln2_b.tensor);
    m = linear(gelu(linear(m, l.fc1_w.tensor, l.fc1_b.tensor)), l.fc2_w.tensor, l.fc2_b.tensor);
    x = add(x, m);
  }
  return layer_norm(x, lnf_g_.tensor, lnf_b_.tensor);
}

Tensor VarModel::transformer_block_incremental(const Tensor& rows,
                                               std::vector<KvCache>& caches) const {
  Tensor x = rows;
  std::int64_t w = cfg_.width;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& l = layers_[li];
    KvCache& cache = caches[li];
    Tensor h = layer_norm(x, l.ln1_g.tensor, l.ln1_b.tensor);
    Tensor qkv = linear(h, l.qkv_w.tensor, l.qkv_b.tensor);
    Tensor q = slice_cols(qkv, 0, w);
    Tensor k = slice_cols(qkv, w, 2 * w);
    Tensor v = slice_cols(qkv, 2 * w, 3 * w);
    cache.k.insert(cache.k.end(), k.values().begin(), k.values().end());
    cache.v.insert(cache.v.end(), v.values().begin(), v.values().end());
    std::int64_t total = static_cast<std::int64_t>(cache.k.size()) / w;
    Tensor k_all = Tensor::from_data({total, w}, cache.k);
    Tensor v_all = Tensor::from_data({total, w}, cache.v);
    Tensor att = attention(k_all, v_all, q, cfg_.heads, Tensor());
    x = add(x, linear(att, l.proj_w.tensor, l.proj_b.tensor));
    Tensor mm = layer_norm(x, l.ln2_g.tensor, l.ln2_b.tensor);
    mm = linear(gelu(linear(mm, l.fc1_w.tensor, l.fc1_b.tensor)), l.fc2_w.tensor,
                l.fc2_b.tensor);
    x = add(x, mm);
  }
  return layer_norm(x, lnf_g_.tensor, lnf_b_.tensor);
}

Tensor VarModel::head_logits(const Tensor& rows) const {
  return linear(rows, head_w_.tensor, head_b_.tensor);
}

Tensor VarModel::forward_teacher_forced(const VarSample& sample) const {
  if (static_cast<std::int64_t>(sample.hr_tokens.size()) != sched_.total_tokens())
    throw ShapeError("forward_teacher_forced: " + std::to_string(sample.hr_tokens.size()) +
                     " tokens but the schedule has " + std::to_string(sched_.total_tokens()));
  std::int64_t rho_l = sched_.rho_max();
  if (sample.lr_feature_rows.shape() != Shape{rho_l * rho_l, cfg_.n_z})
    throw ShapeError("forward_teacher_forced: conditioning rows " +
                     shape_str(sample.lr_feature_rows.shape()) + " but expected [" +
                     std::to_string(rho_l * rho_l) + "," + std::to_string(cfg_.n_z) + "]");
  if (static_cast<std::int64_t>(sample.level_input_rows.size()) != sched_.levels() - 1)
    throw ShapeError("forward_teacher_forced: level input maps missing");

  std::vector<Tensor> parts;
  parts.push_back(embed_lookup(class_emb_.tensor,
                               {static_cast<std::int32_t>(sample.cls)}));
  parts.push_back(add(linear(sample.lr_feature_rows, lr_proj_w_.tensor, lr_proj_b_.tensor),
                      positional_view(sched_.levels())));
  parts.push_back(add(tile_rows(start_emb_.tensor, sched_.rho(1) * sched_.rho(1)),
                      positional_view(1)));
  for (std::int64_t l = 2; l <= sched_.levels(); ++l)
    parts.push_back(add(linear(sample.level_input_rows[l - 2], in_proj_w_.tensor,
                               in_proj_b_.tensor),
                        positional_view(l)));
  Tensor rows = concat_rows(parts);
  Tensor mask = block_causal_mask(sched_, prefix_len());
  Tensor x = transformer_stack(rows, mask);
  Tensor level_rows = slice_rows(x, prefix_len(), sequence_length());
  return head_logits(level_rows);
}

std::vector<KvCache> VarModel::make_caches() const {
  return std::vector<KvCache>(static_cast<std::size_t>(cfg_.depth));
}

void VarModel::prime_prefix(std::vector<KvCache>& caches, const Tensor& lr_feature_rows,
                            DegradationClass cls) const {
  std::vector<Tensor> parts;
  parts.push_back(embed_lookup(class_emb_.tensor, {static_cast<std::int32_t>(cls)}));
  parts.push_back(add(linear(lr_feature_rows, lr_proj_w_.tensor, lr_proj_b_.tensor),
                      positional_view(sched_.levels())));
  transformer_block_incremental(concat_rows(parts), caches);
}

Tensor VarModel::forward_level(std::vector<KvCache>& caches, std::int64_t level,
                               const Tensor& cum) const {
  Tensor rows = embed_block(level, cum);
  Tensor x = transformer_block_incremental(rows, caches);
  return head_logits(x);
}

std::vector<Tensor> level_inputs_from_tokens(const TokenSequence& tokens, const Codebook& cb,
                                             const PhiFilter& phi) {
  const ScaleSchedule& sched = tokens.schedule;
  std::int64_t rho_l = sched.rho_max();
  std::vector<Tensor> out;
  Tensor cum;
  for (std::int64_t l = 1; l < sched.levels(); ++l) {
    Tensor map = lookup_level_map(cb, tokens.levels[l - 1], sched.rho(l));
    Tensor contrib = phi.apply(resize(map, rho_l, rho_l, ResampleMode::kArea));
    cum = cum.defined() ? add(cum, contrib) : contrib;
    std::int64_t rho_next = sched.rho(l + 1);
    Tensor down = resize(cum, rho_next, rho_next, ResampleMode::kArea);
    out.push_back(chw_to_rows(down).clone_detached());
  }
  return out;
}

VarSample prepare_var_sample(const Image& hr, const RqvaeModel& rqvae,
                             const DegradationConfig& degradation) {
  VarSample s;
  Tensor hr_t = hr.to_tensor();
  HierarchicalOutputs hr_tok = rqvae.tokenize(hr_t);
  s.hr_tokens = hr_tok.tokens.flat();
  s.level_input_rows = level_inputs_from_tokens(hr_tok.tokens, rqvae.codebook(), rqvae.phi());

  DegradeResult deg = degrade(hr, degradation);
  s.cls = deg.cls;
  Image lr_up = interpolate(deg.lr, hr.height, hr.width, ResampleMode::kBilinear);
  Tensor lr_t = lr_up.to_tensor();
  s.lr_feature_rows = chw_to_rows(rqvae.encode(lr_t)).clone_detached();
  s.lr_tokens = rqvae.tokenize(lr_t).tokens.flat();
  return s;
}

VarTrainHistory train_var(VarModel& model, const RqvaeModel& rqvae,
                          const std::vector<Image>& dataset, const VarTrainConfig& cfg,
                          std::ostream* log) {
  if (dataset.empty()) throw Error("train_var: empty dataset");
  if (model.config().vocab != rqvae.codebook().size() ||
      model.config().n_z != rqvae.codebook().dim())
    throw ShapeError("train_var: transformer vocabulary/din does not match the tokenizer");
  if (!(model.schedule() == rqvae.schedule()))
    throw ShapeError("train_var: transformer and tokenizer schedules differ");

  if (log) *log << "preparing " << dataset.size() << " training pairs\n";
  std::vector<VarSample> samples;
  samples.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    DegradationConfig d = cfg.degradation;
    d.seed = splitmix64(cfg.degradation.seed ^ splitmix64(0xD15C0 + i));
    samples.push_back(prepare_var_sample(dataset[i], rqvae, d));
  }

  AdamWConfig ocfg;
  ocfg.lr = cfg.lr;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW opt(model.params(), ocfg);
  Rng class_rng = Rng::substream(cfg.seed, 7);

  VarTrainHistory hist;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    Tensor batch_loss = Tensor::scalar(0.0);
    double ce_sum = 0, dpo_sum = 0;
    for (std::int64_t b = 0; b < cfg.batch; ++b) {
      std::size_t pick = static_cast<std::size_t>((step * cfg.batch + b) %
                                                  static_cast<std::int64_t>(dataset.size()));
      VarSample sample = samples[pick];  // cheap: shared tensors
      if (class_rng.bernoulli(cfg.class_free_prob)) sample.cls = DegradationClass::kClassFree;
      Tensor logits = model.forward_teacher_forced(sample);
      Tensor ce = loss_ce(logits, sample.hr_tokens);
      ce_sum += ce.item();
      Tensor total = ce;
      if (cfg.use_dpo) {
        Tensor dpo = loss_dpo(logits, sample.hr_tokens, sample.lr_tokens, cfg.dpo_beta);
        dpo_sum += dpo.item();
        total = add(total, scale(dpo, cfg.dpo_weight));
      }
      batch_loss = add(batch_loss, total);
    }
    batch_loss = scale(batch_loss, 1.0 / static_cast<double>(cfg.batch));
    double v = batch_loss.item();
    if (!std::isfinite(v))
      throw DivergenceError("train_var: non-finite loss at step " + std::to_string(step));
    backward(batch_loss);
    for (auto* p : model.params())
      if (p->trainable && !p->tensor.has_grad()) p->tensor.grad_mut();
    opt.step();
    hist.ce.push_back(ce_sum / static_cast<double>(cfg.batch));
    hist.dpo.push_back(dpo_sum / static_cast<double>(cfg.batch));
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      *log << "var step " << step << " ce " << hist.ce.back() << " dpo " << hist.dpo.back()
           << "\n";
  }
  return hist;
}

namespace {

std::vector<std::int32_t> sample_rows(const Tensor& logits, const Sampler& sampler, Rng& rng) {
  std::int64_t m = logits.dim(0), k = logits.dim(1);
  std::vector<std::int32_t> out(static_cast<std::size_t>(m));
  const double* p = logits.data();
  if (sampler.kind == Sampler::Kind::kGreedy) {
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = p + i * k;
      std::int32_t best = 0;
      for (std::int64_t j = 1; j < k; ++j)
        if (row[j] > row[best]) best = static_cast<std::int32_t>(j);
      out[i] = best;
    }
    return out;
  }
  std::int64_t kk = std::min<std::int64_t>(std::max<std::int64_t>(sampler.top_k, 1), k);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = p + i * k;
    for (std::int64_t j = 0; j < k; ++j) idx[j] = j;
    std::partial_sort(idx.begin(), idx.begin() + kk, idx.end(), [&](std::int64_t a, std::int64_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    double mx = row[idx[0]];
    double z = 0;
    std::vector<double> w(static_cast<std::size_t>(kk));
    for (std::int64_t j = 0; j < kk; ++j) {
      w[j] = std::exp(row[idx[j]] - mx);
      z += w[j];
    }
    double u = rng.uniform(0.0, z);
    double acc = 0;
    std::int64_t chosen = kk - 1;
    for (std::int64_t j = 0; j < kk; ++j) {
      acc += w[j];
      if (u < acc) {
        chosen = j;
        break;
      }
    }
    out[i] = static_cast<std::int32_t>(idx[chosen]);
  }
  return out;
}

}  // namespace

GenerateResult generate(const VarModel& model, const RqvaeModel& rqvae, const Image& lr,
                        DegradationClass cls, std::int64_t upto_scale, const Sampler& sampler,
                        double cfg_weight) {
  const ScaleSchedule& sched = model.schedule();
  if (upto_scale < 1 || upto_scale > sched.num_scales())
    throw Error("generate: scale " + std::to_string(upto_scale) + " out of range 1.." +
                std::to_string(sched.num_scales()));
  std::int64_t native = rqvae.native_side();
  Image lr_up = interpolate(lr, native, native, ResampleMode::kBilinear);
  Tensor feat_rows = chw_to_rows(rqvae.encode(lr_up.to_tensor())).clone_detached();

  auto caches = model.make_caches();
  model.prime_prefix(caches, feat_rows, cls);
  std::vector<KvCache> caches_free;
  bool use_cfg = cfg_weight != 0.0 && cls != DegradationClass::kClassFree;
  if (use_cfg) {
    caches_free = model.make_caches();
    model.prime_prefix(caches_free, feat_rows, DegradationClass::kClassFree);
  }

  Rng rng(sampler.seed);
  std::int64_t rho_l = sched.rho_max();
  Tensor cum = Tensor::zeros({rqvae.codebook().dim(), rho_l, rho_l});
  std::vector<Tensor> maps;
  GenerateResult result;
  // a partial generation is a complete sequence under the truncated schedule
  result.tokens.schedule = upto_scale == sched.num_scales() ? sched : sched.truncated(upto_scale);

  std::int64_t last_level = sched.boundaries[upto_scale - 1];
  for (std::int64_t l = 1; l <= last_level; ++l) {
    Tensor logits = model.forward_level(caches, l, cum);
    if (use_cfg) {
      Tensor free_logits = model.forward_level(caches_free, l, cum);
      logits = classifier_free_guidance(logits, free_logits, cfg_weight);
    }
    std::vector<std::int32_t> idx = sample_rows(logits, sampler, rng);
    Tensor map = lookup_level_map(rqvae.codebook(), idx, sched.rho(l));
    cum = add(cum, rqvae.phi().apply(resize(map, rho_l, rho_l, ResampleMode::kArea)));
    maps.push_back(map.clone_detached());
    result.tokens.levels.push_back(std::move(idx));
  }

  for (std::int64_t n = 1; n <= upto_scale; ++n) {
    Tensor latent = assemble_from_maps(maps, sched, n, rqvae.phi());
    result.images.push_back(rqvae.decode_scale_image(latent, n));
  }
  return result;
}

}  // namespace hivar
