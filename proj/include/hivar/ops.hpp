#pragma once

#include <cstdint>
#include <vector>

#include "hivar/tensor.hpp"

namespace hivar {

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor abs_t(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1 + exp(x)), stable

// x[m,n] + v[n] broadcast over rows
Tensor add_rowvec(const Tensor& x, const Tensor& v);

// Matrix
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T -> [m,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[m,k] w[k,n] b[n]

// Shape manipulation (all copying; backward routes gradients straight through)
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end);
Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor tile_rows(const Tensor& x, std::int64_t m);     // [1,n] -> [m,n]
Tensor chw_to_rows(const Tensor& x);                   // [C,H,W] -> [H*W,C]
Tensor rows_to_chw(const Tensor& x, std::int64_t h, std::int64_t w);  // inverse

// Normalization / activations over rows
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);
Tensor group_norm(const Tensor& x, std::int64_t groups, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-6);  // x: [C,H,W]
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// Convolution, single image CHW. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::int64_t stride = 1, std::int64_t pad = 0);

// Embedding rows: table[K,n], indices in [0,K) -> [len,n]
Tensor embed_lookup(const Tensor& table, const std::vector<std::int32_t>& indices);

// One element per row: x[m,n], idx[m] -> [m]
Tensor pick(const Tensor& x, const std::vector<std::int32_t>& idx);

// Reductions to scalar
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Identity forward, blocks gradient flow.
Tensor stopgrad(const Tensor& a);

// Straight-through estimator: forward value r, gradient passes to z unchanged.
Tensor straight_through(const Tensor& z, const Tensor& r);

// Finite differences along a spatial axis of [C,H,W]: axis 0 -> [C,H-1,W],
// axis 1 -> [C,H,W-1].
Tensor spatial_diff(const Tensor& x, int axis);

// Convenience compositions
Tensor mse(const Tensor& a, const Tensor& b);       // mean squared error
Tensor sum_sq(const Tensor& a);                     // sum of squares

// Image-gradient l1 distance: mean |d(a)-d(b)| over both spatial axes.
Tensor edge_l1(const Tensor& a, const Tensor& b);

}  // namespace hivar
