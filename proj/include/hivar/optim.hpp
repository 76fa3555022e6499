#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hivar/tensor.hpp"

namespace hivar {

// Named trainable tensor. Frozen parameters receive no optimizer updates and
// require no gradients.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor t, bool train = true);
  void set_trainable(bool v);
};

using ParamRefs = std::vector<Parameter*>;

// Throws if two parameters share a name.
void check_unique_names(const ParamRefs& params);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  AdamW(ParamRefs params, AdamWConfig cfg);

  // Applies one update. Throws Error if a trainable parameter has no gradient.
  void step();
  void zero_grad();
  std::int64_t step_count() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  ParamRefs params_;
  std::vector<Moments> moments_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace hivar
