#pragma once

#include <cstdint>
#include <vector>

#include "hivar/tensor.hpp"

namespace hivar {

// Sampling convention, fixed project-wide:
//
//   * Coordinates are half-pixel-centered: destination pixel p samples the
//     source at x = (p + 0.5) * (src/dst) - 0.5, clamped to the source range.
//     Bilinear and nearest modes use this mapping.
//   * Area mode treats pixels as unit boxes. Destination cell p covers
//     [p*r, (p+1)*r) in source units (r = src/dst) and averages the covered
//     source cells with exact fractional overlap weights. The same formula
//     serves both directions, and the upsampling operator is the exact
//     (partition-of-unity scaled) adjoint of the downsampling operator.
//   * Area resizes whose per-axis ratio is an integer power of two are
//     evaluated as a chain of factor-2 halvings. This makes nested
//     downsamples bit-identical to direct ones (resize(x, /4) equals
//     resize(resize(x, /2), /2) exactly), which the hierarchical tokenizer
//     relies on for exact prefix consistency.
enum class ResampleMode { kBilinear, kArea, kNearest, kAuto };

// Core kernel over raw CHW data. Total function: any target >= 1 is valid.
std::vector<double> resize_chw(const double* src, std::int64_t c, std::int64_t h,
                               std::int64_t w, std::int64_t h2, std::int64_t w2,
                               ResampleMode mode);

// Differentiable resize of a [C,H,W] tensor.
Tensor resize(const Tensor& x, std::int64_t h2, std::int64_t w2,
              ResampleMode mode = ResampleMode::kAuto);

}  // namespace hivar
