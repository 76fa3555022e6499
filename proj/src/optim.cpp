#include "hivar/optim.hpp"

#include <cmath>
#include <unordered_set>

namespace hivar {

Parameter::Parameter(std::string n, Tensor t, bool train)
    : name(std::move(n)), tensor(std::move(t)), trainable(train) {
  tensor.set_requires_grad(trainable);
}

void Parameter::set_trainable(bool v) {
  trainable = v;
  tensor.set_requires_grad(v);
}

void check_unique_names(const ParamRefs& params) {
  std::unordered_set<std::string> seen;
  for (const auto* p : params)
    if (!seen.insert(p->name).second)
      throw Error("duplicate parameter name: " + p->name);
}

AdamW::AdamW(ParamRefs params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  check_unique_names(params_);
  moments_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::size_t n = params_[i]->tensor.values().size();
    moments_[i].m.assign(n, 0.0);
    moments_[i].v.assign(n, 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter* p = params_[pi];
    if (!p->trainable) continue;
    if (!p->tensor.has_grad())
      throw Error("optimizer_step: trainable parameter '" + p->name + "' has no gradient");
    const std::vector<double>& g = p->tensor.grad();
    std::vector<double>& m = moments_[pi].m;
    std::vector<double>& v = moments_[pi].v;
    std::vector<double>& w = p->tensor.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mh = m[i] / bc1;
      double vh = v[i] / bc2;
      // decoupled weight decay
      w[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->tensor.zero_grad();
}

}  // namespace hivar
