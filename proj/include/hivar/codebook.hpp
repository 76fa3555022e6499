#pragma once

#include <cstdint>
#include <vector>

#include "hivar/optim.hpp"
#include "hivar/tensor.hpp"

namespace hivar {

// Learned vocabulary of K vectors in R^{n_z}, with usage statistics.
// Tokenization only reads the vectors; usage counts are updated explicitly by
// trainers so lookups stay read-only and batch-parallel safe.
class Codebook {
 public:
  Codebook(std::int64_t k, std::int64_t n_z);
  static Codebook random(std::int64_t k, std::int64_t n_z, Rng& rng, double stddev);

  std::int64_t size() const { return k_; }
  std::int64_t dim() const { return n_z_; }

  Parameter& param() { return param_; }
  const Parameter& param() const { return param_; }
  const double* row(std::int64_t i) const;

  // Index of the nearest entry in Euclidean distance; ties break to the
  // lowest index.
  std::int32_t nearest(const double* z) const;

  void note_usage(const std::vector<std::int32_t>& indices);
  const std::vector<std::uint64_t>& usage() const { return usage_; }
  void reset_usage();

  // Throws if any entry is non-finite or K < 2.
  void validate() const;

 private:
  std::int64_t k_, n_z_;
  Parameter param_;
  std::vector<std::uint64_t> usage_;
};

}  // namespace hivar
