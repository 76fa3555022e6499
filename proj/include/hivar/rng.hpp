#pragma once

#include <cstdint>
#include <random>

namespace hivar {

// Deterministic RNG. Every source of randomness in a run flows from one
// explicit seed; independent streams are derived with substream ids so that
// reordering one consumer does not perturb the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent stream from (seed, id) via splitmix64 mixing.
  static Rng substream(std::uint64_t seed, std::uint64_t id);

  double uniform(double lo = 0.0, double hi = 1.0);
  double normal(double mean = 0.0, double stddev = 1.0);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive bounds
  bool bernoulli(double p);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace hivar
