#pragma once

#include <cstdint>
#include <vector>

#include "hivar/image.hpp"

namespace hivar {

// Procedural training corpus standing in for photographic datasets. Four
// pattern families; the mix weights choose how often each one appears.
// Fully deterministic from (seed, index).
struct SyntheticDatasetSpec {
  std::int64_t count = 64;
  std::int64_t resolution = 64;
  double w_gradient = 1.0;
  double w_checker = 1.0;
  double w_blob = 1.0;
  double w_noise = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

Image synth_image(const SyntheticDatasetSpec& spec, std::int64_t index);
std::vector<Image> synth_dataset(const SyntheticDatasetSpec& spec);

}  // namespace hivar
