#include "hivar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace hivar {

void TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  n->value.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("from_data: " + std::to_string(data.size()) +
                     " values do not fill shape " + shape_str(shape));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, double mean) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.values()) x = rng.normal(mean, stddev);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item(): tensor has shape " + shape_str(shape()));
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty())
    throw Error("grad(): no gradient present (backward not run or not required)");
  return node_->grad;
}

std::vector<double>& Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

bool Tensor::all_finite() const {
  for (double v : node_->value)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::clone_detached() const {
  auto n = std::make_shared<TensorNode>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(std::move(n));
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> bw) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = false;
  for (const auto& p : parents) track = track || p.requires_grad();
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward: undefined tensor");
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

  // Iterative post-order DFS to get a topological order of the tape.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  TensorNode* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing trainable below the loss
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      TensorNode* child = f.node->parents[f.next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward(*n);
    }
  }
}

}  // namespace hivar
