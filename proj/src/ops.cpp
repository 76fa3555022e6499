#include "hivar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace hivar {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check_same_shape(const char* what, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw_shape_mismatch(what, a.shape(), b.shape());
}

// Rows/cols view of a tensor treated as a matrix over its last dimension.
std::int64_t last_dim(const Tensor& t) {
  if (t.shape().empty()) throw ShapeError("expected rank >= 1");
  return t.shape().back();
}

std::int64_t row_count(const Tensor& t) { return t.numel() / last_dim(t); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> out(a.values());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pb[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    const double* g = self.grad.data();
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += g[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += g[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> out(a.values());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= pb[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    const double* g = self.grad.data();
    if (an->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += g[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= g[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> out(a.values());
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= pb[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      const double* vb = bn->value.data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += g[i] * vb[i];
    }
    if (bn->requires_grad) {
      const double* va = an->value.data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += g[i] * va[i];
    }
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (auto& v : out) v *= c;
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an, c](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (auto& v : out) v += c;
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor abs_t(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::fabs(v);
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    const double* x = an->value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double s = x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0);
      an->grad[i] += s * self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    const double* x = an->value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      an->grad[i] += (cdf + x[i] * pdf) * self.grad[i];
    }
  });
}

namespace {
double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = sigmoid_scalar(v);
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      double s = self.value[i];
      an->grad[i] += s * (1.0 - s) * self.grad[i];
    }
  });
}

Tensor softplus(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
  auto an = a.node();
  return make_op(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
    const double* x = an->value.data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += sigmoid_scalar(x[i]) * self.grad[i];
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  std::int64_t n = last_dim(x), m = row_count(x);
  if (v.numel() != n) throw_shape_mismatch("add_rowvec", x.shape(), v.shape());
  std::vector<double> out(x.values());
  const double* pv = v.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += pv[j];
  auto xn = x.node(), vn = v.node();
  return make_op(x.shape(), std::move(out), {x, v}, [xn, vn, m, n](TensorNode& self) {
    const double* g = self.grad.data();
    if (xn->requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += g[i];
    if (vn->requires_grad)
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) vn->grad[j] += g[i * n + j];
  });
}

namespace {

// C[m,n] += A[m,k] * B[k,n]
void mm_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
void mm_tn_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
               std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw_shape_mismatch("matmul", a.shape(), b.shape());
  std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  mm_acc(a.data(), b.data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
    if (an->requires_grad)  // dA = dC * B^T
      mm_nt_acc(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
    if (bn->requires_grad)  // dB = A^T * dC
      mm_tn_acc(an->value.data(), self.grad.data(), bn->grad.data(), m, k, n);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1))
    throw_shape_mismatch("matmul_nt", a.shape(), b.shape());
  std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  mm_nt_acc(a.data(), b.data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
    if (an->requires_grad)  // dA = dC * B
      mm_acc(self.grad.data(), bn->value.data(), an->grad.data(), m, n, k);
    if (bn->requires_grad)  // dB = dC^T * A
      mm_tn_acc(self.grad.data(), an->value.data(), bn->grad.data(), m, n, k);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.dim(1) != w.dim(0))
    throw_shape_mismatch("linear", x.shape(), w.shape());
  std::int64_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (b.numel() != n) throw_shape_mismatch("linear bias", w.shape(), b.shape());
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const double* pb = b.data();
  for (std::int64_t i = 0; i < m; ++i) std::memcpy(out.data() + i * n, pb, n * sizeof(double));
  mm_acc(x.data(), w.data(), out.data(), m, k, n);
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op({m, n}, std::move(out), {x, w, b}, [xn, wn, bn, m, k, n](TensorNode& self) {
    if (xn->requires_grad) mm_nt_acc(self.grad.data(), wn->value.data(), xn->grad.data(), m, n, k);
    if (wn->requires_grad) mm_tn_acc(xn->value.data(), self.grad.data(), wn->grad.data(), m, k, n);
    if (bn->requires_grad) {
      const double* g = self.grad.data();
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) bn->grad[j] += g[i * n + j];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw_shape_mismatch("reshape", a.shape(), shape);
  auto an = a.node();
  return make_op(std::move(shape), a.values(), {a}, [an](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end) {
  std::int64_t n = last_dim(x), m = row_count(x);
  if (begin < 0 || end > m || begin >= end)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of " + std::to_string(m) + " rows");
  std::int64_t mm = end - begin;
  std::vector<double> out(x.values().begin() + begin * n, x.values().begin() + end * n);
  auto xn = x.node();
  return make_op({mm, n}, std::move(out), {x}, [xn, begin, n](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[static_cast<std::size_t>(begin * n) + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end) {
  std::int64_t n = last_dim(x), m = row_count(x);
  if (begin < 0 || end > n || begin >= end)
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of " + std::to_string(n) + " cols");
  std::int64_t nn = end - begin;
  std::vector<double> out(static_cast<std::size_t>(m * nn));
  const double* px = x.data();
  for (std::int64_t i = 0; i < m; ++i)
    std::memcpy(out.data() + i * nn, px + i * n + begin, nn * sizeof(double));
  auto xn = x.node();
  return make_op({m, nn}, std::move(out), {x}, [xn, begin, m, n, nn](TensorNode& self) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < nn; ++j)
        xn->grad[i * n + begin + j] += self.grad[i * nn + j];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_rows: no parts");
  std::int64_t n = last_dim(parts[0]);
  std::int64_t m = 0;
  for (const auto& p : parts) {
    if (last_dim(p) != n) throw_shape_mismatch("concat_rows", parts[0].shape(), p.shape());
    m += row_count(p);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m * n));
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_op({m, n}, std::move(out), parts, [nodes](TensorNode& self) {
    std::size_t off = 0;
    for (auto& pn : nodes) {
      std::size_t cnt = pn->value.size();
      if (pn->requires_grad)
        for (std::size_t i = 0; i < cnt; ++i) pn->grad[i] += self.grad[off + i];
      off += cnt;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error("concat_cols: no parts");
  std::int64_t m = row_count(parts[0]);
  std::int64_t n = 0;
  for (const auto& p : parts) {
    if (row_count(p) != m) throw_shape_mismatch("concat_cols", parts[0].shape(), p.shape());
    n += last_dim(p);
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  std::int64_t coff = 0;
  for (const auto& p : parts) {
    std::int64_t pn = last_dim(p);
    const double* src = p.data();
    for (std::int64_t i = 0; i < m; ++i)
      std::memcpy(out.data() + i * n + coff, src + i * pn, pn * sizeof(double));
    coff += pn;
  }
  std::vector<NodePtr> nodes;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(last_dim(p));
  }
  return make_op({m, n}, std::move(out), parts, [nodes, widths, m, n](TensorNode& self) {
    std::int64_t coff = 0;
    for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
      std::int64_t pn = widths[pi];
      if (nodes[pi]->requires_grad)
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < pn; ++j)
            nodes[pi]->grad[i * pn + j] += self.grad[i * n + coff + j];
      coff += pn;
    }
  });
}

Tensor tile_rows(const Tensor& x, std::int64_t m) {
  std::int64_t n = x.numel();
  if (row_count(x) != 1) throw ShapeError("tile_rows: expected a single row, got " + shape_str(x.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i)
    std::memcpy(out.data() + i * n, x.data(), n * sizeof(double));
  auto xn = x.node();
  return make_op({m, n}, std::move(out), {x}, [xn, m, n](TensorNode& self) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) xn->grad[j] += self.grad[i * n + j];
  });
}

Tensor chw_to_rows(const Tensor& x) {
  if (x.shape().size() != 3) throw ShapeError("chw_to_rows: expected [C,H,W], got " + shape_str(x.shape()));
  std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  std::vector<double> out(static_cast<std::size_t>(c * hw));
  const double* px = x.data();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t p = 0; p < hw; ++p) out[p * c + ch] = px[ch * hw + p];
  auto xn = x.node();
  return make_op({hw, c}, std::move(out), {x}, [xn, c, hw](TensorNode& self) {
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < hw; ++p) xn->grad[ch * hw + p] += self.grad[p * c + ch];
  });
}

Tensor rows_to_chw(const Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.shape().size() != 2 || x.dim(0) != h * w)
    throw ShapeError("rows_to_chw: rows " + shape_str(x.shape()) + " do not fill " +
                     std::to_string(h) + "x" + std::to_string(w));
  std::int64_t c = x.dim(1), hw = h * w;
  std::vector<double> out(static_cast<std::size_t>(c * hw));
  const double* px = x.data();
  for (std::int64_t p = 0; p < hw; ++p)
    for (std::int64_t ch = 0; ch < c; ++ch) out[ch * hw + p] = px[p * c + ch];
  auto xn = x.node();
  return make_op({c, h, w}, std::move(out), {x}, [xn, c, hw](TensorNode& self) {
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch) xn->grad[p * c + ch] += self.grad[ch * hw + p];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  std::int64_t n = last_dim(x), m = row_count(x);
  if (gamma.numel() != n || beta.numel() != n)
    throw_shape_mismatch("layer_norm affine", x.shape(), gamma.shape());
  std::vector<double> out(static_cast<std::size_t>(m * n));
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m * n));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pbt = beta.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = px + i * n;
    double mu = 0;
    for (std::int64_t j = 0; j < n; ++j) mu += row[j];
    mu /= n;
    double var = 0;
    for (std::int64_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::int64_t j = 0; j < n; ++j) {
      double xh = (row[j] - mu) * is;
      (*xhat)[i * n + j] = xh;
      out[i * n + j] = pg[j] * xh + pbt[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [xn, gn, bn, xhat, inv_std, m, n](TensorNode& self) {
    const double* g = self.grad.data();
    const double* pg = gn->value.data();
    for (std::int64_t i = 0; i < m; ++i) {
      const double* xh = xhat->data() + i * n;
      const double* gr = g + i * n;
      if (gn->requires_grad)
        for (std::int64_t j = 0; j < n; ++j) gn->grad[j] += gr[j] * xh[j];
      if (bn->requires_grad)
        for (std::int64_t j = 0; j < n; ++j) bn->grad[j] += gr[j];
      if (xn->requires_grad) {
        double sum_d = 0, sum_dx = 0;
        for (std::int64_t j = 0; j < n; ++j) {
          double d = gr[j] * pg[j];
          sum_d += d;
          sum_dx += d * xh[j];
        }
        double is = (*inv_std)[i];
        for (std::int64_t j = 0; j < n; ++j) {
          double d = gr[j] * pg[j];
          xn->grad[i * n + j] += is * (d - sum_d / n - xh[j] * sum_dx / n);
        }
      }
    }
  });
}

Tensor group_norm(const Tensor& x, std::int64_t groups, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  if (x.shape().size() != 3) throw ShapeError("group_norm: expected [C,H,W], got " + shape_str(x.shape()));
  std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2), hw = h * w;
  if (c % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible by " +
                     std::to_string(groups) + " groups");
  if (gamma.numel() != c || beta.numel() != c)
    throw_shape_mismatch("group_norm affine", x.shape(), gamma.shape());
  std::int64_t cg = c / groups, gsz = cg * hw;
  std::vector<double> out(x.values().size());
  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups));
  const double* px = x.data();
  const double* pg = gamma.data();
  const double* pbt = beta.data();
  for (std::int64_t gi = 0; gi < groups; ++gi) {
    const double* blk = px + gi * gsz;
    double mu = 0;
    for (std::int64_t j = 0; j < gsz; ++j) mu += blk[j];
    mu /= gsz;
    double var = 0;
    for (std::int64_t j = 0; j < gsz; ++j) var += (blk[j] - mu) * (blk[j] - mu);
    var /= gsz;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[gi] = is;
    for (std::int64_t ci = 0; ci < cg; ++ci) {
      std::int64_t ch = gi * cg + ci;
      for (std::int64_t p = 0; p < hw; ++p) {
        std::int64_t idx = ch * hw + p;
        double xh = (px[idx] - mu) * is;
        (*xhat)[idx] = xh;
        out[idx] = pg[ch] * xh + pbt[ch];
      }
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [xn, gn, bn, xhat, inv_std, groups, cg, hw](TensorNode& self) {
    const double* g = self.grad.data();
    const double* pg = gn->value.data();
    std::int64_t gsz = cg * hw;
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      if (gn->requires_grad || bn->requires_grad) {
        for (std::int64_t ci = 0; ci < cg; ++ci) {
          std::int64_t ch = gi * cg + ci;
          double sg = 0, sb = 0;
          for (std::int64_t p = 0; p < hw; ++p) {
            std::int64_t idx = ch * hw + p;
            sg += g[idx] * (*xhat)[idx];
            sb += g[idx];
          }
          if (gn->requires_grad) gn->grad[ch] += sg;
          if (bn->requires_grad) bn->grad[ch] += sb;
        }
      }
      if (xn->requires_grad) {
        double sum_d = 0, sum_dx = 0;
        for (std::int64_t ci = 0; ci < cg; ++ci) {
          std::int64_t ch = gi * cg + ci;
          for (std::int64_t p = 0; p < hw; ++p) {
            std::int64_t idx = ch * hw + p;
            double d = g[idx] * pg[ch];
            sum_d += d;
            sum_dx += d * (*xhat)[idx];
          }
        }
        double is = (*inv_std)[gi];
        for (std::int64_t ci = 0; ci < cg; ++ci) {
          std::int64_t ch = gi * cg + ci;
          for (std::int64_t p = 0; p < hw; ++p) {
            std::int64_t idx = ch * hw + p;
            double d = g[idx] * pg[ch];
            xn->grad[idx] += is * (d - sum_d / gsz - (*xhat)[idx] * sum_dx / gsz);
          }
        }
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  std::int64_t n = last_dim(x), m = row_count(x);
  std::vector<double> out(x.values());
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    double mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0;
    for (std::int64_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::int64_t j = 0; j < n; ++j) row[j] /= s;
  }
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, m, n](TensorNode& self) {
    const double* y = self.value.data();
    const double* g = self.grad.data();
    for (std::int64_t i = 0; i < m; ++i) {
      double dot = 0;
      for (std::int64_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::int64_t j = 0; j < n; ++j)
        xn->grad[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  std::int64_t n = last_dim(x), m = row_count(x);
  std::vector<double> out(x.values());
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    double mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0;
    for (std::int64_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (std::int64_t j = 0; j < n; ++j) row[j] -= lse;
  }
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, m, n](TensorNode& self) {
    const double* y = self.value.data();
    const double* g = self.grad.data();
    for (std::int64_t i = 0; i < m; ++i) {
      double gs = 0;
      for (std::int64_t j = 0; j < n; ++j) gs += g[i * n + j];
      for (std::int64_t j = 0; j < n; ++j)
        xn->grad[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t stride,
              std::int64_t pad) {
  if (x.shape().size() != 3 || w.shape().size() != 4 || x.dim(0) != w.dim(1))
    throw_shape_mismatch("conv2d", x.shape(), w.shape());
  std::int64_t c = x.dim(0), h = x.dim(1), ww = x.dim(2);
  std::int64_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (b.numel() != o) throw_shape_mismatch("conv2d bias", w.shape(), b.shape());
  std::int64_t h2 = (h + 2 * pad - kh) / stride + 1;
  std::int64_t w2 = (ww + 2 * pad - kw) / stride + 1;
  if (h2 < 1 || w2 < 1)
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " does not fit input " +
                     shape_str(x.shape()));
  std::vector<double> out(static_cast<std::size_t>(o * h2 * w2));
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  for (std::int64_t oc = 0; oc < o; ++oc) {
    double* oplane = out.data() + oc * h2 * w2;
    std::fill(oplane, oplane + h2 * w2, pb[oc]);
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const double* iplane = px + ic * h * ww;
      const double* kplane = pw + (oc * c + ic) * kh * kw;
      for (std::int64_t ki = 0; ki < kh; ++ki) {
        for (std::int64_t kj = 0; kj < kw; ++kj) {
          double kv = kplane[ki * kw + kj];
          if (kv == 0.0) continue;
          for (std::int64_t i2 = 0; i2 < h2; ++i2) {
            std::int64_t y = i2 * stride + ki - pad;
            if (y < 0 || y >= h) continue;
            const double* irow = iplane + y * ww;
            double* orow = oplane + i2 * w2;
            for (std::int64_t j2 = 0; j2 < w2; ++j2) {
              std::int64_t xx = j2 * stride + kj - pad;
              if (xx < 0 || xx >= ww) continue;
              orow[j2] += kv * irow[xx];
            }
          }
        }
      }
    }
  }
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return make_op({o, h2, w2}, std::move(out), {x, w, b},
                 [xn, wn, bn, c, h, ww, o, kh, kw, h2, w2, stride, pad](TensorNode& self) {
    const double* g = self.grad.data();
    if (bn->requires_grad) {
      for (std::int64_t oc = 0; oc < o; ++oc) {
        double s = 0;
        const double* oplane = g + oc * h2 * w2;
        for (std::int64_t p = 0; p < h2 * w2; ++p) s += oplane[p];
        bn->grad[oc] += s;
      }
    }
    for (std::int64_t oc = 0; oc < o; ++oc) {
      const double* oplane = g + oc * h2 * w2;
      for (std::int64_t ic = 0; ic < c; ++ic) {
        const double* iplane = xn->value.data() + ic * h * ww;
        const double* kplane = wn->value.data() + (oc * c + ic) * kh * kw;
        double* dk = wn->requires_grad ? wn->grad.data() + (oc * c + ic) * kh * kw : nullptr;
        double* dx = xn->requires_grad ? xn->grad.data() + ic * h * ww : nullptr;
        for (std::int64_t ki = 0; ki < kh; ++ki) {
          for (std::int64_t kj = 0; kj < kw; ++kj) {
            double kv = kplane[ki * kw + kj];
            double wacc = 0;
            for (std::int64_t i2 = 0; i2 < h2; ++i2) {
              std::int64_t y = i2 * stride + ki - pad;
              if (y < 0 || y >= h) continue;
              const double* irow = iplane + y * ww;
              double* dxrow = dx ? dx + y * ww : nullptr;
              const double* orow = oplane + i2 * w2;
              for (std::int64_t j2 = 0; j2 < w2; ++j2) {
                std::int64_t xx = j2 * stride + kj - pad;
                if (xx < 0 || xx >= ww) continue;
                double go = orow[j2];
                wacc += go * irow[xx];
                if (dxrow) dxrow[xx] += go * kv;
              }
            }
            if (dk) dk[ki * kw + kj] += wacc;
          }
        }
      }
    }
  });
}

Tensor embed_lookup(const Tensor& table, const std::vector<std::int32_t>& indices) {
  if (table.shape().size() != 2)
    throw ShapeError("embed_lookup: table must be [K,n], got " + shape_str(table.shape()));
  std::int64_t k = table.dim(0), n = table.dim(1);
  std::int64_t m = static_cast<std::int64_t>(indices.size());
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const double* pt = table.data();
  for (std::int64_t i = 0; i < m; ++i) {
    std::int32_t idx = indices[i];
    if (idx < 0 || idx >= k)
      throw Error("embed_lookup: index " + std::to_string(idx) + " out of vocabulary " +
                  std::to_string(k));
    std::memcpy(out.data() + i * n, pt + static_cast<std::int64_t>(idx) * n, n * sizeof(double));
  }
  auto tn = table.node();
  auto idxs = std::make_shared<std::vector<std::int32_t>>(indices);
  return make_op({m, n}, std::move(out), {table}, [tn, idxs, n](TensorNode& self) {
    for (std::size_t i = 0; i < idxs->size(); ++i) {
      double* dst = tn->grad.data() + static_cast<std::int64_t>((*idxs)[i]) * n;
      const double* src = self.grad.data() + static_cast<std::int64_t>(i) * n;
      for (std::int64_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

Tensor pick(const Tensor& x, const std::vector<std::int32_t>& idx) {
  std::int64_t n = last_dim(x), m = row_count(x);
  if (static_cast<std::int64_t>(idx.size()) != m)
    throw ShapeError("pick: " + std::to_string(idx.size()) + " indices for " + std::to_string(m) +
                     " rows");
  std::vector<double> out(static_cast<std::size_t>(m));
  const double* px = x.data();
  for (std::int64_t i = 0; i < m; ++i) {
    if (idx[i] < 0 || idx[i] >= n)
      throw Error("pick: index " + std::to_string(idx[i]) + " out of row width " +
                  std::to_string(n));
    out[i] = px[i * n + idx[i]];
  }
  auto xn = x.node();
  auto idxs = std::make_shared<std::vector<std::int32_t>>(idx);
  return make_op({m}, std::move(out), {x}, [xn, idxs, n](TensorNode& self) {
    for (std::size_t i = 0; i < idxs->size(); ++i)
      xn->grad[static_cast<std::int64_t>(i) * n + (*idxs)[i]] += self.grad[i];
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0;
  for (double v : a.values()) s += v;
  auto an = a.node();
  return make_op({1}, {s}, {a}, [an](TensorNode& self) {
    double g = self.grad[0];
    for (auto& v : an->grad) v += g;
  });
}

Tensor mean_all(const Tensor& a) {
  double s = 0;
  for (double v : a.values()) s += v;
  double inv = 1.0 / static_cast<double>(a.numel());
  auto an = a.node();
  return make_op({1}, {s * inv}, {a}, [an, inv](TensorNode& self) {
    double g = self.grad[0] * inv;
    for (auto& v : an->grad) v += g;
  });
}

Tensor stopgrad(const Tensor& a) {
  auto n = std::make_shared<TensorNode>();
  n->shape = a.shape();
  n->value = a.values();
  return Tensor(std::move(n));
}

Tensor straight_through(const Tensor& z, const Tensor& r) {
  check_same_shape("straight_through", z, r);
  auto zn = z.node();
  return make_op(z.shape(), r.values(), {z}, [zn](TensorNode& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) zn->grad[i] += self.grad[i];
  });
}

Tensor spatial_diff(const Tensor& x, int axis) {
  if (x.shape().size() != 3 || axis < 0 || axis > 1)
    throw ShapeError("spatial_diff: expected [C,H,W] and axis 0/1, got " + shape_str(x.shape()));
  std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::int64_t h2 = axis == 0 ? h - 1 : h;
  std::int64_t w2 = axis == 1 ? w - 1 : w;
  if (h2 < 1 || w2 < 1) throw ShapeError("spatial_diff: axis too small in " + shape_str(x.shape()));
  std::int64_t dy = axis == 0 ? w : 1;
  std::vector<double> out(static_cast<std::size_t>(c * h2 * w2));
  const double* px = x.data();
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < h2; ++y)
      for (std::int64_t xx = 0; xx < w2; ++xx) {
        std::int64_t src = (ci * h + y) * w + xx;
        out[(ci * h2 + y) * w2 + xx] = px[src + dy] - px[src];
      }
  auto xn = x.node();
  return make_op({c, h2, w2}, std::move(out), {x}, [xn, c, h, w, h2, w2, dy](TensorNode& self) {
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t y = 0; y < h2; ++y)
        for (std::int64_t xx = 0; xx < w2; ++xx) {
          double g = self.grad[(ci * h2 + y) * w2 + xx];
          std::int64_t src = (ci * h + y) * w + xx;
          xn->grad[src + dy] += g;
          xn->grad[src] -= g;
        }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

Tensor sum_sq(const Tensor& a) { return sum_all(mul(a, a)); }

Tensor edge_l1(const Tensor& a, const Tensor& b) {
  Tensor dy = mean_all(abs_t(sub(spatial_diff(a, 0), spatial_diff(b, 0))));
  Tensor dx = mean_all(abs_t(sub(spatial_diff(a, 1), spatial_diff(b, 1))));
  return add(dy, dx);
}

}  // namespace hivar
