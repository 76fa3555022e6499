#include "hivar/resample.hpp"

#include <algorithm>
#include <cmath>

namespace hivar {

namespace {

// One axis of a resize step: for each destination index, the contributing
// source indices and weights. Weights sum to 1 per destination index.
struct AxisMap {
  std::int64_t n_src = 0, n_dst = 0;
  std::vector<std::int32_t> offset;  // n_dst+1 prefix offsets into idx/wgt
  std::vector<std::int32_t> idx;
  std::vector<double> wgt;
};

AxisMap axis_identity(std::int64_t n) {
  AxisMap m;
  m.n_src = m.n_dst = n;
  m.offset.resize(n + 1);
  m.idx.resize(n);
  m.wgt.assign(n, 1.0);
  for (std::int64_t i = 0; i <= n; ++i) m.offset[i] = static_cast<std::int32_t>(i);
  for (std::int64_t i = 0; i < n; ++i) m.idx[i] = static_cast<std::int32_t>(i);
  return m;
}

AxisMap axis_half(std::int64_t n_src) {
  AxisMap m;
  m.n_src = n_src;
  m.n_dst = n_src / 2;
  m.offset.resize(m.n_dst + 1);
  for (std::int64_t p = 0; p <= m.n_dst; ++p) m.offset[p] = static_cast<std::int32_t>(2 * p);
  m.idx.resize(n_src);
  m.wgt.assign(n_src, 0.5);
  for (std::int64_t i = 0; i < n_src; ++i) m.idx[i] = static_cast<std::int32_t>(i);
  return m;
}

AxisMap axis_area(std::int64_t n_src, std::int64_t n_dst) {
  AxisMap m;
  m.n_src = n_src;
  m.n_dst = n_dst;
  m.offset.push_back(0);
  double r = static_cast<double>(n_src) / static_cast<double>(n_dst);
  for (std::int64_t p = 0; p < n_dst; ++p) {
    double a = p * r, b = (p + 1) * r;
    std::int64_t c0 = static_cast<std::int64_t>(std::floor(a));
    std::int64_t c1 = std::min<std::int64_t>(n_src, static_cast<std::int64_t>(std::ceil(b)));
    double total = 0;
    std::size_t start = m.idx.size();
    for (std::int64_t ci = c0; ci < c1; ++ci) {
      double o = std::min(b, static_cast<double>(ci + 1)) - std::max(a, static_cast<double>(ci));
      if (o <= 0) continue;
      m.idx.push_back(static_cast<std::int32_t>(ci));
      m.wgt.push_back(o);
      total += o;
    }
    for (std::size_t i = start; i < m.wgt.size(); ++i) m.wgt[i] /= total;
    m.offset.push_back(static_cast<std::int32_t>(m.idx.size()));
  }
  return m;
}

AxisMap axis_bilinear(std::int64_t n_src, std::int64_t n_dst) {
  AxisMap m;
  m.n_src = n_src;
  m.n_dst = n_dst;
  m.offset.push_back(0);
  double r = static_cast<double>(n_src) / static_cast<double>(n_dst);
  for (std::int64_t p = 0; p < n_dst; ++p) {
    double x = (p + 0.5) * r - 0.5;
    std::int64_t i0 = static_cast<std::int64_t>(std::floor(x));
    double t = x - static_cast<double>(i0);
    std::int64_t lo = std::clamp<std::int64_t>(i0, 0, n_src - 1);
    std::int64_t hi = std::clamp<std::int64_t>(i0 + 1, 0, n_src - 1);
    if (lo == hi) {
      m.idx.push_back(static_cast<std::int32_t>(lo));
      m.wgt.push_back(1.0);
    } else {
      m.idx.push_back(static_cast<std::int32_t>(lo));
      m.wgt.push_back(1.0 - t);
      m.idx.push_back(static_cast<std::int32_t>(hi));
      m.wgt.push_back(t);
    }
    m.offset.push_back(static_cast<std::int32_t>(m.idx.size()));
  }
  return m;
}

AxisMap axis_nearest(std::int64_t n_src, std::int64_t n_dst) {
  AxisMap m;
  m.n_src = n_src;
  m.n_dst = n_dst;
  m.offset.resize(n_dst + 1);
  double r = static_cast<double>(n_src) / static_cast<double>(n_dst);
  for (std::int64_t p = 0; p < n_dst; ++p) {
    std::int64_t i = static_cast<std::int64_t>(std::floor((p + 0.5) * r));
    m.idx.push_back(static_cast<std::int32_t>(std::clamp<std::int64_t>(i, 0, n_src - 1)));
    m.wgt.push_back(1.0);
  }
  for (std::int64_t i = 0; i <= n_dst; ++i) m.offset[i] = static_cast<std::int32_t>(i);
  return m;
}

bool is_pow2_multiple(std::int64_t big, std::int64_t small) {
  if (small <= 0 || big % small != 0) return false;
  std::int64_t q = big / small;
  return q > 1 && (q & (q - 1)) == 0;
}

// A resize step: independent row and column maps applied separably (rows
// first, then columns).
struct Step {
  AxisMap rows, cols;
};

std::vector<Step> plan(std::int64_t h, std::int64_t w, std::int64_t h2, std::int64_t w2,
                       ResampleMode mode) {
  if (mode == ResampleMode::kAuto)
    mode = (h2 <= h && w2 <= w) ? ResampleMode::kArea : ResampleMode::kBilinear;
  std::vector<Step> steps;
  if (mode == ResampleMode::kArea && is_pow2_multiple(h, h2) && is_pow2_multiple(w, w2) &&
      h / h2 == w / w2) {
    std::int64_t ch = h, cw = w;
    while (ch > h2) {
      steps.push_back({axis_half(ch), axis_half(cw)});
      ch /= 2;
      cw /= 2;
    }
    return steps;
  }
  AxisMap rows, cols;
  switch (mode) {
    case ResampleMode::kArea:
      rows = (h2 == h) ? axis_identity(h) : axis_area(h, h2);
      cols = (w2 == w) ? axis_identity(w) : axis_area(w, w2);
      break;
    case ResampleMode::kBilinear:
      rows = (h2 == h) ? axis_identity(h) : axis_bilinear(h, h2);
      cols = (w2 == w) ? axis_identity(w) : axis_bilinear(w, w2);
      break;
    case ResampleMode::kNearest:
      rows = (h2 == h) ? axis_identity(h) : axis_nearest(h, h2);
      cols = (w2 == w) ? axis_identity(w) : axis_nearest(w, w2);
      break;
    default:
      break;
  }
  steps.push_back({std::move(rows), std::move(cols)});
  return steps;
}

// dst[p, x] = sum_c map.wgt * src[c, x]  (rows axis); `width` columns per row.
void apply_rows(const AxisMap& m, const double* src, double* dst, std::int64_t width) {
  for (std::int64_t p = 0; p < m.n_dst; ++p) {
    double* drow = dst + p * width;
    std::fill(drow, drow + width, 0.0);
    for (std::int32_t k = m.offset[p]; k < m.offset[p + 1]; ++k) {
      const double* srow = src + static_cast<std::int64_t>(m.idx[k]) * width;
      double wv = m.wgt[k];
      for (std::int64_t x = 0; x < width; ++x) drow[x] += wv * srow[x];
    }
  }
}

void apply_cols(const AxisMap& m, const double* src, double* dst, std::int64_t height) {
  for (std::int64_t y = 0; y < height; ++y) {
    const double* srow = src + y * m.n_src;
    double* drow = dst + y * m.n_dst;
    for (std::int64_t p = 0; p < m.n_dst; ++p) {
      double acc = 0;
      for (std::int32_t k = m.offset[p]; k < m.offset[p + 1]; ++k)
        acc += m.wgt[k] * srow[m.idx[k]];
      drow[p] = acc;
    }
  }
}

// Transposed application for the backward pass: scatter dst grads into src.
void apply_rows_t(const AxisMap& m, const double* gdst, double* gsrc, std::int64_t width) {
  for (std::int64_t p = 0; p < m.n_dst; ++p) {
    const double* drow = gdst + p * width;
    for (std::int32_t k = m.offset[p]; k < m.offset[p + 1]; ++k) {
      double* srow = gsrc + static_cast<std::int64_t>(m.idx[k]) * width;
      double wv = m.wgt[k];
      for (std::int64_t x = 0; x < width; ++x) srow[x] += wv * drow[x];
    }
  }
}

void apply_cols_t(const AxisMap& m, const double* gdst, double* gsrc, std::int64_t height) {
  for (std::int64_t y = 0; y < height; ++y) {
    const double* drow = gdst + y * m.n_dst;
    double* srow = gsrc + y * m.n_src;
    for (std::int64_t p = 0; p < m.n_dst; ++p)
      for (std::int32_t k = m.offset[p]; k < m.offset[p + 1]; ++k)
        srow[m.idx[k]] += m.wgt[k] * drow[p];
  }
}

std::vector<double> run_plane(const std::vector<Step>& steps, const double* src,
                              std::int64_t h, std::int64_t w) {
  std::vector<double> cur(src, src + h * w);
  std::int64_t ch = h, cw = w;
  for (const auto& st : steps) {
    std::vector<double> tmp(static_cast<std::size_t>(st.rows.n_dst * cw));
    apply_rows(st.rows, cur.data(), tmp.data(), cw);
    ch = st.rows.n_dst;
    std::vector<double> out(static_cast<std::size_t>(ch * st.cols.n_dst));
    apply_cols(st.cols, tmp.data(), out.data(), ch);
    cw = st.cols.n_dst;
    cur = std::move(out);
  }
  return cur;
}

std::vector<double> run_plane_backward(const std::vector<Step>& steps, const double* gdst,
                                       std::int64_t h, std::int64_t w) {
  // Replay sizes forward, then walk the steps in reverse with transposes.
  std::vector<std::pair<std::int64_t, std::int64_t>> sizes{{h, w}};
  for (const auto& st : steps) sizes.push_back({st.rows.n_dst, st.cols.n_dst});
  std::vector<double> cur(gdst, gdst + sizes.back().first * sizes.back().second);
  for (std::size_t si = steps.size(); si-- > 0;) {
    const auto& st = steps[si];
    std::int64_t ph = sizes[si].first;
    std::vector<double> tmp(static_cast<std::size_t>(st.rows.n_dst * st.cols.n_src), 0.0);
    apply_cols_t(st.cols, cur.data(), tmp.data(), st.rows.n_dst);
    std::vector<double> out(static_cast<std::size_t>(ph * st.cols.n_src), 0.0);
    apply_rows_t(st.rows, tmp.data(), out.data(), st.cols.n_src);
    cur = std::move(out);
  }
  return cur;
}

}  // namespace

std::vector<double> resize_chw(const double* src, std::int64_t c, std::int64_t h,
                               std::int64_t w, std::int64_t h2, std::int64_t w2,
                               ResampleMode mode) {
  if (h2 < 1 || w2 < 1) throw ShapeError("resize: target must be >= 1");
  if (h2 == h && w2 == w) return std::vector<double>(src, src + c * h * w);
  auto steps = plan(h, w, h2, w2, mode);
  std::vector<double> out(static_cast<std::size_t>(c * h2 * w2));
  for (std::int64_t ci = 0; ci < c; ++ci) {
    auto plane = run_plane(steps, src + ci * h * w, h, w);
    std::copy(plane.begin(), plane.end(), out.begin() + ci * h2 * w2);
  }
  return out;
}

Tensor resize(const Tensor& x, std::int64_t h2, std::int64_t w2, ResampleMode mode) {
  if (x.shape().size() != 3)
    throw ShapeError("resize: expected [C,H,W], got " + shape_str(x.shape()));
  std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> out = resize_chw(x.data(), c, h, w, h2, w2, mode);
  if (h2 == h && w2 == w) {
    auto xn = x.node();
    return make_op({c, h, w}, std::move(out), {x}, [xn](TensorNode& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
  }
  auto steps = std::make_shared<std::vector<Step>>(plan(h, w, h2, w2, mode));
  auto xn = x.node();
  return make_op({c, h2, w2}, std::move(out), {x},
                 [xn, steps, c, h, w, h2, w2](TensorNode& self) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      auto gsrc = run_plane_backward(*steps, self.grad.data() + ci * h2 * w2, h, w);
      double* dst = xn->grad.data() + ci * h * w;
      for (std::size_t i = 0; i < gsrc.size(); ++i) dst[i] += gsrc[i];
    }
  });
}

}  // namespace hivar
