#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "hivar/common.hpp"
#include "hivar/rng.hpp"

namespace hivar {

// One node of the define-by-run graph. The graph doubles as the tape: it is
// rebuilt on every forward pass and freed when the last Tensor referencing it
// goes away. Nodes whose inputs do not require gradients carry no backward
// closure, so inference-only code pays nothing for the tape.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily by ensure_grad()
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad();
};

using NodePtr = std::shared_ptr<TensorNode>;

// Dense n-dimensional double tensor with reverse-mode autodiff.
// Value-like handle: copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& grad_mut();
  void zero_grad();

  bool all_finite() const;

  // Deep copy of values; result is detached from the graph.
  Tensor clone_detached() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// Reverse-mode sweep from a scalar loss. Every reachable node with
// requires_grad receives dLoss/dNode in node->grad.
void backward(const Tensor& loss);

// Creates a result node wired to its parents. `track` decides whether the
// backward closure is recorded (callers pass "any parent requires grad").
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> bw);

}  // namespace hivar
