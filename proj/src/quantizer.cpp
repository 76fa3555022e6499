#include "hivar/quantizer.hpp"

#include <cmath>

#include "hivar/resample.hpp"

namespace hivar {

PhiFilter PhiFilter::identity() { return PhiFilter{}; }

PhiFilter PhiFilter::shared_conv(std::int64_t n_z) {
  PhiFilter phi;
  phi.is_identity = false;
  Tensor w = Tensor::zeros({n_z, n_z, 3, 3});
  // delta kernel: starts as the identity so early training matches plain RQ
  for (std::int64_t c = 0; c < n_z; ++c) w.values()[(c * n_z + c) * 9 + 4] = 1.0;
  phi.weight = Parameter("phi.weight", std::move(w));
  phi.bias = Parameter("phi.bias", Tensor::zeros({n_z}));
  return phi;
}

Tensor PhiFilter::apply(const Tensor& x) const {
  if (is_identity) return x;
  return conv2d(x, weight.tensor, bias.tensor, 1, 1);
}

ParamRefs PhiFilter::params() {
  if (is_identity) return {};
  return {&weight, &bias};
}

VqResult vq_quantize(const std::vector<double>& z, const Codebook& cb) {
  if (static_cast<std::int64_t>(z.size()) != cb.dim())
    throw ShapeError("vq_quantize: vector dim " + std::to_string(z.size()) +
                     " vs codebook dim " + std::to_string(cb.dim()));
  std::int32_t idx = cb.nearest(z.data());
  const double* r = cb.row(idx);
  return {idx, std::vector<double>(r, r + cb.dim())};
}

std::vector<std::int32_t> quantize_map(const Tensor& z, const Codebook& cb) {
  if (z.shape().size() != 3 || z.dim(0) != cb.dim())
    throw ShapeError("quantize_map: expected [n_z,h,w] with n_z=" + std::to_string(cb.dim()) +
                     ", got " + shape_str(z.shape()));
  std::int64_t n_z = z.dim(0), hw = z.dim(1) * z.dim(2);
  std::vector<std::int32_t> out(static_cast<std::size_t>(hw));
  std::vector<double> v(static_cast<std::size_t>(n_z));
  const double* p = z.data();
  for (std::int64_t i = 0; i < hw; ++i) {
    for (std::int64_t c = 0; c < n_z; ++c) v[c] = p[c * hw + i];
    out[i] = cb.nearest(v.data());
  }
  return out;
}

Tensor lookup_level_map(const Codebook& cb, const std::vector<std::int32_t>& indices,
                        std::int64_t rho) {
  Tensor rows = embed_lookup(cb.param().tensor, indices);
  return rows_to_chw(rows, rho, rho);
}

namespace {

// Quantizes one level of a working residual: downsample to rho, pointwise
// nearest neighbor, lookup (straight-through when training).
struct LevelStep {
  std::vector<std::int32_t> indices;
  Tensor map;        // committed map used for reconstruction
  Tensor down;       // downsampled residual that was quantized
  Tensor plain_map;  // raw lookup (codebook gradient path)
};

LevelStep quantize_level(const Tensor& working, std::int64_t rho, const Codebook& cb,
                         bool straight) {
  LevelStep st;
  st.down = resize(working, rho, rho, ResampleMode::kArea);
  st.indices = quantize_map(st.down, cb);
  st.plain_map = lookup_level_map(cb, st.indices, rho);
  st.map = straight ? straight_through(st.down, st.plain_map) : st.plain_map;
  return st;
}

}  // namespace

RqOutputs var_rq_tokenize(const Tensor& z, const Codebook& cb, const ScaleSchedule& sched,
                          const PhiFilter& phi, const TokenizeOptions& opt) {
  std::int64_t rho_l = sched.rho_max();
  if (z.shape().size() != 3 || z.dim(0) != cb.dim() || z.dim(1) != rho_l || z.dim(2) != rho_l)
    throw ShapeError("var_rq_tokenize: expected [" + std::to_string(cb.dim()) + "," +
                     std::to_string(rho_l) + "," + std::to_string(rho_l) + "], got " +
                     shape_str(z.shape()));
  RqOutputs out;
  out.tokens.schedule = sched;
  out.commit_encoder = Tensor::scalar(0.0);
  out.commit_codebook = Tensor::scalar(0.0);
  Tensor residual = z;
  Tensor cumulative;
  for (std::int64_t l = 1; l <= sched.levels(); ++l) {
    LevelStep st = quantize_level(residual, sched.rho(l), cb, opt.straight_through);
    if (opt.straight_through) {
      out.commit_encoder = add(out.commit_encoder, sum_sq(sub(st.down, stopgrad(st.plain_map))));
      out.commit_codebook = add(out.commit_codebook, sum_sq(sub(stopgrad(st.down), st.plain_map)));
    }
    Tensor contrib = phi.apply(resize(st.map, rho_l, rho_l, ResampleMode::kArea));
    residual = sub(residual, contrib);
    cumulative = cumulative.defined() ? add(cumulative, contrib) : contrib;
    out.tokens.levels.push_back(std::move(st.indices));
    out.level_maps.push_back(std::move(st.map));
    double norm = 0;
    for (double v : residual.values()) norm += v * v;
    out.residual_norms.push_back(std::sqrt(norm));
  }
  out.cumulative = cumulative;
  return out;
}

HierarchicalOutputs hierarchical_tokenize(const Tensor& image, const EncodeFn& encode,
                                          const Codebook& cb, const ScaleSchedule& sched,
                                          const PhiFilter& phi, const TokenizeOptions& opt) {
  if (image.shape().size() != 3 || image.dim(1) != image.dim(2))
    throw ShapeError("hierarchical_tokenize: expected square [C,H,H] image, got " +
                     shape_str(image.shape()));
  std::int64_t h = image.dim(1);
  std::int64_t rho_l = sched.rho_max();
  if (h % rho_l != 0)
    throw ShapeError("hierarchical_tokenize: image side " + std::to_string(h) +
                     " is not a multiple of rho_L=" + std::to_string(rho_l));

  HierarchicalOutputs out;
  out.tokens.schedule = sched;
  out.commit_encoder = Tensor::scalar(0.0);
  out.commit_codebook = Tensor::scalar(0.0);

  std::int64_t committed = 0;  // levels finished at previous scales (b_{n-1})
  for (std::int64_t n = 1; n <= sched.num_scales(); ++n) {
    std::int64_t work = sched.working_res(n);
    std::int64_t img_side = work * (h / rho_l);
    Tensor scaled = resize(image, img_side, img_side, ResampleMode::kArea);
    Tensor features = encode(scaled);
    if (features.shape().size() != 3 || features.dim(0) != cb.dim() ||
        features.dim(1) != work || features.dim(2) != work)
      throw ShapeError("hierarchical_tokenize: encoder produced " + shape_str(features.shape()) +
                       " for working resolution " + std::to_string(work));
    out.scale_features.push_back(features);

    Tensor working = features;
    std::int64_t bound = sched.boundaries[n - 1];
    for (std::int64_t l = 1; l <= bound; ++l) {
      if (l <= committed) {
        // token reuse: subtract the already-committed level without re-quantizing
        Tensor contrib =
            phi.apply(resize(out.level_maps[l - 1], work, work, ResampleMode::kArea));
        working = sub(working, contrib);
      } else {
        LevelStep st = quantize_level(working, sched.rho(l), cb, opt.straight_through);
        if (opt.straight_through) {
          out.commit_encoder =
              add(out.commit_encoder, sum_sq(sub(st.down, stopgrad(st.plain_map))));
          out.commit_codebook =
              add(out.commit_codebook, sum_sq(sub(stopgrad(st.down), st.plain_map)));
        }
        Tensor contrib = phi.apply(resize(st.map, work, work, ResampleMode::kArea));
        working = sub(working, contrib);
        out.tokens.levels.push_back(std::move(st.indices));
        out.level_maps.push_back(std::move(st.map));
      }
    }
    committed = bound;
    out.scale_latents.push_back(assemble_from_maps(out.level_maps, sched, n, phi));
  }
  return out;
}

Tensor assemble_from_maps(const std::vector<Tensor>& level_maps, const ScaleSchedule& sched,
                          std::int64_t upto_scale, const PhiFilter& phi) {
  if (upto_scale < 1 || upto_scale > sched.num_scales())
    throw Error("assemble: scale " + std::to_string(upto_scale) + " out of range 1.." +
                std::to_string(sched.num_scales()));
  std::int64_t work = sched.working_res(upto_scale);
  std::int64_t bound = sched.boundaries[upto_scale - 1];
  if (static_cast<std::int64_t>(level_maps.size()) < bound)
    throw Error("assemble: only " + std::to_string(level_maps.size()) + " level maps for b_n=" +
                std::to_string(bound));
  Tensor acc;
  for (std::int64_t l = 1; l <= bound; ++l) {
    Tensor contrib = phi.apply(resize(level_maps[l - 1], work, work, ResampleMode::kArea));
    acc = acc.defined() ? add(acc, contrib) : contrib;
  }
  return acc;
}

Tensor assemble_latent(const TokenSequence& tokens, std::int64_t upto_scale, const Codebook& cb,
                       const PhiFilter& phi) {
  tokens.validate(cb.size());
  if (upto_scale < 1 || upto_scale > tokens.schedule.num_scales())
    throw Error("assemble_latent: scale " + std::to_string(upto_scale) + " out of range 1.." +
                std::to_string(tokens.schedule.num_scales()));
  std::vector<Tensor> maps;
  std::int64_t bound = tokens.schedule.boundaries[upto_scale - 1];
  for (std::int64_t l = 1; l <= bound; ++l)
    maps.push_back(lookup_level_map(cb, tokens.levels[l - 1], tokens.schedule.rho(l)));
  return assemble_from_maps(maps, tokens.schedule, upto_scale, phi);
}

}  // namespace hivar
