#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "hivar/codebook.hpp"
#include "hivar/ops.hpp"
#include "hivar/schedule.hpp"
#include "hivar/tokens.hpp"

namespace hivar {

// Filter applied to residual maps after upsampling. Either the identity (the
// algebraically exact setting used by the quantizer property tests) or a
// shared learned 3x3 convolution initialized to the identity kernel.
struct PhiFilter {
  bool is_identity = true;
  Parameter weight;  // [n_z, n_z, 3, 3]
  Parameter bias;    // [n_z]

  static PhiFilter identity();
  static PhiFilter shared_conv(std::int64_t n_z);

  Tensor apply(const Tensor& x) const;
  ParamRefs params();
};

// Nearest codebook entry of a single feature vector; ties break to the lowest
// index. Returns the index and the selected entry.
struct VqResult {
  std::int32_t index;
  std::vector<double> vector;
};
VqResult vq_quantize(const std::vector<double>& z, const Codebook& cb);

// Pointwise nearest-neighbor indices of a [n_z,h,w] map, row-major.
std::vector<std::int32_t> quantize_map(const Tensor& z, const Codebook& cb);

struct TokenizeOptions {
  // Training path: looked-up maps become straight-through estimates and the
  // commitment terms are accumulated.
  bool straight_through = false;
};

struct RqOutputs {
  TokenSequence tokens;
  std::vector<Tensor> level_maps;      // committed [n_z, rho_l, rho_l] maps
  Tensor cumulative;                   // sum_l phi(up(level_map_l)) at rho_L
  std::vector<double> residual_norms;  // ||Z - cumulative so far|| after each level
  Tensor commit_encoder;               // sum_l ||D_l - sg(R_l)||^2   (straight_through only)
  Tensor commit_codebook;              // sum_l ||sg(D_l) - R_l||^2
};

// Multi-scale residual quantization: at each level the working residual is
// area-downsampled to rho_l, quantized pointwise, looked up, area-upsampled
// back, passed through phi and subtracted.
RqOutputs var_rq_tokenize(const Tensor& z, const Codebook& cb, const ScaleSchedule& sched,
                          const PhiFilter& phi, const TokenizeOptions& opt = {});

// Image [3,H,W] -> feature map [n_z, fH, fW].
using EncodeFn = std::function<Tensor(const Tensor& image)>;

struct HierarchicalOutputs {
  TokenSequence tokens;
  std::vector<Tensor> level_maps;
  std::vector<Tensor> scale_latents;   // per scale n: assembled latent at s_n*rho_L
  std::vector<Tensor> scale_features;  // per scale n: encoder features of the downsampled image
  Tensor commit_encoder;
  Tensor commit_codebook;
};

// Hierarchical tokenization: scales are processed coarse to fine; each scale
// re-encodes the correspondingly downsampled image, subtracts the
// contributions of levels committed at earlier scales without re-quantizing,
// then quantizes its own level block. The first b_n level grids therefore
// coincide with tokenizing the s_n-downsampled image under the truncated
// schedule.
HierarchicalOutputs hierarchical_tokenize(const Tensor& image, const EncodeFn& encode,
                                          const Codebook& cb, const ScaleSchedule& sched,
                                          const PhiFilter& phi, const TokenizeOptions& opt = {});

// sum over levels l <= b_n of phi(up(lookup(tokens_l), s_n*rho_L)); the
// latent the scale-n decoder consumes.
Tensor assemble_latent(const TokenSequence& tokens, std::int64_t upto_scale, const Codebook& cb,
                       const PhiFilter& phi);

// Same accumulation over already-materialized level maps.
Tensor assemble_from_maps(const std::vector<Tensor>& level_maps, const ScaleSchedule& sched,
                          std::int64_t upto_scale, const PhiFilter& phi);

// Looked-up map of one level's indices: [n_z, rho, rho].
Tensor lookup_level_map(const Codebook& cb, const std::vector<std::int32_t>& indices,
                        std::int64_t rho);

}  // namespace hivar
