#include "hivar/codebook.hpp"

#include <cmath>

namespace hivar {

Codebook::Codebook(std::int64_t k, std::int64_t n_z)
    : k_(k), n_z_(n_z), param_("codebook.vectors", Tensor::zeros({k, n_z})),
      usage_(static_cast<std::size_t>(k), 0) {
  if (k < 2) throw Error("codebook: K must be >= 2");
}

Codebook Codebook::random(std::int64_t k, std::int64_t n_z, Rng& rng, double stddev) {
  Codebook cb(k, n_z);
  for (auto& v : cb.param_.tensor.values()) v = rng.normal(0.0, stddev);
  return cb;
}

const double* Codebook::row(std::int64_t i) const {
  return param_.tensor.data() + i * n_z_;
}

std::int32_t Codebook::nearest(const double* z) const {
  const double* table = param_.tensor.data();
  std::int32_t best = 0;
  double best_d = 0;
  for (std::int64_t j = 0; j < n_z_; ++j) {
    double d = table[j] - z[j];
    best_d += d * d;
  }
  for (std::int64_t i = 1; i < k_; ++i) {
    const double* r = table + i * n_z_;
    double dist = 0;
    for (std::int64_t j = 0; j < n_z_; ++j) {
      double d = r[j] - z[j];
      dist += d * d;
      if (dist >= best_d) break;
    }
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<std::int32_t>(i);
    }
  }
  return best;
}

void Codebook::note_usage(const std::vector<std::int32_t>& indices) {
  for (auto i : indices) usage_.at(static_cast<std::size_t>(i))++;
}

void Codebook::reset_usage() { usage_.assign(static_cast<std::size_t>(k_), 0); }

void Codebook::validate() const {
  if (k_ < 2) throw Error("codebook: K must be >= 2");
  if (!param_.tensor.all_finite()) throw Error("codebook: non-finite entries");
}

}  // namespace hivar
