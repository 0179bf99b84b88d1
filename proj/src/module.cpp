#include "spotfast/module.hpp"

#include <cmath>
#include <memory>

#include "spotfast/error.hpp"

namespace spotfast {

Var& Module::register_parameter(std::string name, Tensor init) {
  params_.emplace_back(std::move(name), std::make_unique<Var>(std::move(init), true));
  return *params_.back().second;
}

void Module::register_buffer(std::string name, Tensor* buffer) {
  buffers_.emplace_back(std::move(name), buffer);
}

void Module::register_module(std::string name, Module* child) {
  children_.emplace_back(std::move(name), child);
}

void Module::collect_parameters(const std::string& prefix,
                                std::vector<std::pair<std::string, Var*>>& out) {
  for (auto& [name, var] : params_) out.emplace_back(prefix + name, var.get());
  for (auto& [name, child] : children_) child->collect_parameters(prefix + name + ".", out);
}

void Module::collect_buffers(const std::string& prefix,
                             std::vector<std::pair<std::string, Tensor*>>& out) {
  for (auto& [name, buf] : buffers_) out.emplace_back(prefix + name, buf);
  for (auto& [name, child] : children_) child->collect_buffers(prefix + name + ".", out);
}

std::vector<std::pair<std::string, Var*>> Module::named_parameters() {
  std::vector<std::pair<std::string, Var*>> out;
  collect_parameters("", out);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Module::named_buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  collect_buffers("", out);
  return out;
}

void Module::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

void Module::zero_grad() {
  for (auto& [name, p] : named_parameters()) p->zero_grad();
}

std::int64_t Module::parameter_count() {
  std::int64_t n = 0;
  for (auto& [name, p] : named_parameters()) n += p->value().numel();
  return n;
}

void zero_parameters(Module& m) {
  for (auto& [name, p] : m.named_parameters()) p->mutable_value().fill(0.0);
}

Linear::Linear(std::int64_t in, std::int64_t out, bool bias, std::mt19937_64& rng)
    : in_(in), out_(out) {
  require(in >= 1 && out >= 1, "Linear: dimensions must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = &register_parameter("weight", Tensor::uniform({out, in}, rng, -bound, bound));
  if (bias) bias_ = &register_parameter("bias", Tensor::uniform({out}, rng, -bound, bound));
}

Var Linear::forward(const Var& x) const { return ops::linear(x, *weight_, bias_ ? *bias_ : Var()); }

Conv3d::Conv3d(std::int64_t in, std::int64_t out, ops::Index3 kernel, ops::Index3 stride,
               ops::Index3 pad, bool bias, std::mt19937_64& rng)
    : stride_(stride), pad_(pad) {
  const std::int64_t fan_in = in * kernel[0] * kernel[1] * kernel[2];
  // He-normal for ReLU stacks.
  weight_ = &register_parameter(
      "weight", Tensor::randn({out, in, kernel[0], kernel[1], kernel[2]}, rng,
                              std::sqrt(2.0 / static_cast<double>(fan_in))));
  if (bias) bias_ = &register_parameter("bias", Tensor::zeros({out}));
}

Var Conv3d::forward(const Var& x) const {
  return ops::conv3d(x, *weight_, bias_ ? *bias_ : Var(), stride_, pad_);
}

BatchNorm::BatchNorm(std::int64_t channels, int axis, double momentum, double eps)
    : axis_(axis),
      momentum_(momentum),
      eps_(eps),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor({channels}, 1.0)) {
  gamma_ = &register_parameter("weight", Tensor({channels}, 1.0));
  beta_ = &register_parameter("bias", Tensor::zeros({channels}));
  register_buffer("running_mean", &running_mean_);
  register_buffer("running_var", &running_var_);
}

Var BatchNorm::forward(const Var& x) {
  return ops::batch_norm(x, *gamma_, *beta_, axis_, is_training(),
                         {&running_mean_, &running_var_, momentum_, eps_});
}

LayerNorm::LayerNorm(std::int64_t dim, bool affine, double eps) : eps_(eps) {
  if (affine) {
    gamma_ = &register_parameter("weight", Tensor({dim}, 1.0));
    beta_ = &register_parameter("bias", Tensor::zeros({dim}));
  }
}

Var LayerNorm::forward(const Var& x) const {
  return ops::layer_norm(x, gamma_ ? *gamma_ : Var(), beta_ ? *beta_ : Var(), eps_);
}

}  // namespace spotfast
