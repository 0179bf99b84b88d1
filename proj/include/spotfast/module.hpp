#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "spotfast/autograd.hpp"
#include "spotfast/ops.hpp"

namespace spotfast {

/// Owner of named parameters, buffers and child modules. Children register
/// by address, so modules are neither copyable nor movable.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<std::pair<std::string, Var*>> named_parameters();
  std::vector<std::pair<std::string, Tensor*>> named_buffers();

  /// Recursively switches train/eval behaviour (batchnorm statistics, dropout).
  virtual void train(bool on = true);
  bool is_training() const noexcept { return training_; }

  void zero_grad();
  std::int64_t parameter_count();

 protected:
  Var& register_parameter(std::string name, Tensor init);
  void register_buffer(std::string name, Tensor* buffer);
  void register_module(std::string name, Module* child);

 private:
  void collect_parameters(const std::string& prefix, std::vector<std::pair<std::string, Var*>>& out);
  void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Tensor*>>& out);

  bool training_ = true;
  // std::vector<Var> would invalidate Var* on growth.
  std::vector<std::pair<std::string, std::unique_ptr<Var>>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

class Linear : public Module {
 public:
  Linear(std::int64_t in, std::int64_t out, bool bias, std::mt19937_64& rng);
  Var forward(const Var& x) const;

  Var& weight() { return *weight_; }
  Var& bias() { return *bias_; }
  std::int64_t in_features() const { return in_; }
  std::int64_t out_features() const { return out_; }

 private:
  std::int64_t in_, out_;
  Var* weight_;
  Var* bias_ = nullptr;
};

class Conv3d : public Module {
 public:
  Conv3d(std::int64_t in, std::int64_t out, ops::Index3 kernel, ops::Index3 stride, ops::Index3 pad,
         bool bias, std::mt19937_64& rng);
  Var forward(const Var& x) const;

  Var& weight() { return *weight_; }
  Var& bias() { return *bias_; }

 private:
  ops::Index3 stride_, pad_;
  Var* weight_;
  Var* bias_ = nullptr;
};

class BatchNorm : public Module {
 public:
  BatchNorm(std::int64_t channels, int axis, double momentum = 0.1, double eps = 1e-5);
  Var forward(const Var& x);

  Var& gamma() { return *gamma_; }
  Var& beta() { return *beta_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

 private:
  int axis_;
  double momentum_, eps_;
  Var* gamma_;
  Var* beta_;
  Tensor running_mean_, running_var_;
};

class LayerNorm : public Module {
 public:
  LayerNorm(std::int64_t dim, bool affine = true, double eps = 1e-5);
  Var forward(const Var& x) const;

  Var& gamma() { return *gamma_; }
  Var& beta() { return *beta_; }
  bool affine() const { return gamma_ != nullptr; }

 private:
  double eps_;
  Var* gamma_ = nullptr;
  Var* beta_ = nullptr;
};

/// Sets every element of every parameter of `m` to zero.
void zero_parameters(Module& m);

}  // namespace spotfast
