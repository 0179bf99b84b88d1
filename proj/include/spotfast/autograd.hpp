#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "spotfast/tensor.hpp"

namespace spotfast {

// Reverse-mode tape. Each Node owns its forward value and, once backward
// reaches it, its gradient. backward_fn reads self.grad and accumulates into
// the gradients of `inputs`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node& self)> backward_fn;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated so far; empty tensor when nothing reached this node.
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  /// Seeds d(self)/d(self) = 1 for a single-element value and runs the tape.
  void backward();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a graph node. When no input needs gradients (or grad mode is off)
/// the result is a constant and `backward` is dropped.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node& self)> backward);

}  // namespace spotfast
