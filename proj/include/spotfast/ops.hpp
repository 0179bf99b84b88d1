#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "spotfast/autograd.hpp"

// Differentiable primitives. Every op validates shapes and throws
// std::invalid_argument on mismatch.
namespace spotfast::ops {

using Index3 = std::array<std::int64_t, 3>;

Var add(const Var& a, const Var& b);
/// x + c where c broadcasts over the leading dims of x (c.numel() divides x.numel()).
Var add_const(const Var& x, const Tensor& c);
Var scale(const Var& x, double s);
Var mul(const Var& a, const Var& b);
Var relu(const Var& x);

Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<int>& perm);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& x, int axis, std::int64_t start, std::int64_t length);

/// y = x W^T + b over the last dim. `b` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Batched matmul: a [G,M,K] x b [G,K,N] (or b [G,N,K] when transpose_b).
Var bmm(const Var& a, const Var& b, bool transpose_b);

Var softmax(const Var& x);
/// Normalizes over the last dim. gamma/beta may be undefined (no affine).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};
/// Per-channel normalization with channels on `axis`. In training mode batch
/// statistics are used and the running buffers updated (unbiased variance).
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, int axis, bool training,
               const BatchNormState& state);

/// x [B,Ci,T,H,W], weight [Co,Ci,kt,kh,kw]. `bias` may be undefined.
Var conv3d(const Var& x, const Var& weight, const Var& bias, Index3 stride, Index3 pad);

std::int64_t pool_out_len(std::int64_t len, std::int64_t kernel, std::int64_t stride, bool ceil_mode);
/// Max pooling over the last axis of [B,C,T].
Var max_pool_time(const Var& x, std::int64_t kernel, std::int64_t stride, bool ceil_mode);
/// Stride-1 average pooling over (H,W) of [B,C,T,H,W].
Var avg_pool_hw(const Var& x, std::int64_t kh, std::int64_t kw);
/// Bin t averages [floor(t*L/target), ceil((t+1)*L/target)) along `axis`.
Var adaptive_avg_pool(const Var& x, int axis, std::int64_t target);
Var mean(const Var& x, int axis);

Var dropout(const Var& x, double p, std::mt19937_64& rng, bool training);

/// out[r, j] = s1[r, f / n] + s2[r, f % n] with f = flat[r * k + j].
Var pair_scores(const Var& s1, const Var& s2, std::span<const std::int64_t> flat, std::int64_t k);
/// out[r] = sum_j w[r, j] * values[rows[r * k + j]].
Var sparse_rows(const Var& w, std::span<const std::int64_t> rows, const Var& values);

/// Mean over the batch of -sum_i q_i log softmax(logits)_i with
/// q = (1 - eps) onehot + eps / K. Throws Error(Numeric) on non-finite logits.
Var label_smoothed_ce(const Var& logits, std::span<const std::int64_t> targets, double eps);

/// Scalar sum(x * w); used as a probe loss.
Var dot(const Var& x, const Tensor& w);

}  // namespace spotfast::ops
