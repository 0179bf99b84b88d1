#include "spotfast/pkmem.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spotfast/error.hpp"

namespace spotfast {

void MemoryConfig::validate() const {
  require(heads >= 1, "memory: heads must be positive");
  require(key_dim >= 2 && key_dim % 2 == 0, "memory: key_dim must be even");
  require(slots >= 1, "memory: slots must be positive");
  require(k >= 1 && k <= slots * slots, "memory: k must lie in [1, slots^2]");
  require(value_dim >= 1, "memory: value_dim must be positive");
  require(value_dropout >= 0.0 && value_dropout < 1.0, "memory: value_dropout must lie in [0, 1)");
}

namespace {

// Indices of the top `k` entries of s[0..n), score descending then index ascending.
void half_topk(const double* s, std::int64_t n, std::int64_t k, std::vector<std::int64_t>& out) {
  out.resize(static_cast<std::size_t>(n));
  std::iota(out.begin(), out.end(), 0);
  auto better = [s](std::int64_t a, std::int64_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); };
  std::partial_sort(out.begin(), out.begin() + k, out.end(), better);
  out.resize(static_cast<std::size_t>(k));
}

}  // namespace

void topk_from_half_scores(const double* s1, const double* s2, std::int64_t n, std::int64_t k,
                           std::int64_t* out_idx, double* out_scores) {
  require(k >= 1 && k <= n * n, "topk_product_keys: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(n * n) + "]");
  const std::int64_t kh = std::min(k, n);
  std::vector<std::int64_t> a, b;
  half_topk(s1, n, kh, a);
  half_topk(s2, n, kh, b);

  struct Cand {
    double score;
    std::int64_t flat;
  };
  std::vector<Cand> grid;
  grid.reserve(static_cast<std::size_t>(kh * kh));
  for (auto i : a)
    for (auto j : b) grid.push_back({s1[i] + s2[j], i * n + j});
  std::partial_sort(grid.begin(), grid.begin() + k, grid.end(), [](const Cand& x, const Cand& y) {
    return x.score > y.score || (x.score == y.score && x.flat < y.flat);
  });
  for (std::int64_t t = 0; t < k; ++t) {
    out_idx[t] = grid[t].flat;
    out_scores[t] = grid[t].score;
  }
}

TopK topk_product_keys(std::span<const double> q, const Tensor& sub1, const Tensor& sub2, std::int64_t k) {
  require(sub1.rank() == 2 && sub1.shape() == sub2.shape(), "topk_product_keys: sub-key tables must match");
  const std::int64_t n = sub1.dim(0), half = sub1.dim(1);
  require(static_cast<std::int64_t>(q.size()) == 2 * half,
          "topk_product_keys: query has " + std::to_string(q.size()) + " dims, expected " +
              std::to_string(2 * half));
  std::vector<double> s1(static_cast<std::size_t>(n)), s2(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double a = 0.0, b = 0.0;
    for (std::int64_t d = 0; d < half; ++d) {
      a += q[d] * sub1[i * half + d];
      b += q[half + d] * sub2[i * half + d];
    }
    s1[i] = a;
    s2[i] = b;
  }
  TopK out;
  out.indices.resize(static_cast<std::size_t>(std::max<std::int64_t>(k, 0)));
  out.scores.resize(out.indices.size());
  topk_from_half_scores(s1.data(), s2.data(), n, k, out.indices.data(), out.scores.data());
  return out;
}

ProductKeyMemory::ProductKeyMemory(std::int64_t input_dim, const MemoryConfig& cfg, std::mt19937_64& rng)
    : cfg_((cfg.validate(), cfg)), input_dim_(input_dim), dropout_rng_(rng()) {
  require(input_dim >= 1, "memory: input_dim must be positive");
  const std::int64_t half = cfg.key_dim / 2;
  const double key_bound = 1.0 / std::sqrt(static_cast<double>(half));
  for (std::int64_t h = 0; h < cfg.heads; ++h) {
    query_.push_back(std::make_unique<Linear>(input_dim, cfg.key_dim, true, rng));
    register_module("query" + std::to_string(h), query_.back().get());
    if (cfg.query_batchnorm) {
      query_bn_.push_back(std::make_unique<BatchNorm>(cfg.key_dim, 1));
      register_module("query_bn" + std::to_string(h), query_bn_.back().get());
    }
    for (int s = 0; s < 2; ++s)
      sub_keys_.push_back(&register_parameter("sub_keys" + std::to_string(s + 1) + "_" + std::to_string(h),
                                              Tensor::uniform({cfg.slots, half}, rng, -key_bound, key_bound)));
  }
  values_ = &register_parameter(
      "values", Tensor::randn({cfg.slots * cfg.slots, cfg.value_dim}, rng,
                              1.0 / std::sqrt(static_cast<double>(cfg.value_dim))));
  if (cfg.output_layernorm) {
    norm_ = std::make_unique<LayerNorm>(cfg.value_dim, cfg.layernorm_affine);
    register_module("norm", norm_.get());
  }
}

Var ProductKeyMemory::forward(const Var& x) {
  const Shape in_shape = x.shape();
  require(!in_shape.empty() && in_shape.back() == input_dim_,
          "memory_read: input " + shape_str(in_shape) + ", expected last dim " + std::to_string(input_dim_));
  const std::int64_t rows = numel(in_shape) / input_dim_;
  const Var flat = ops::reshape(x, {rows, input_dim_});
  const std::int64_t n = cfg_.slots, k = cfg_.k, half = cfg_.key_dim / 2, heads = cfg_.heads;

  last_indices_.assign(static_cast<std::size_t>(rows * heads * k), 0);
  last_weights_.assign(last_indices_.size(), 0.0);
  Var out;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rows * k));
  std::vector<double> scratch(static_cast<std::size_t>(k));
  for (std::int64_t h = 0; h < heads; ++h) {
    Var q = query_[h]->forward(flat);
    if (cfg_.query_batchnorm) q = query_bn_[h]->forward(q);
    const Var s1 = ops::linear(ops::slice(q, 1, 0, half), *sub_keys_[2 * h], Var());
    const Var s2 = ops::linear(ops::slice(q, 1, half, half), *sub_keys_[2 * h + 1], Var());
    for (std::int64_t r = 0; r < rows; ++r)
      topk_from_half_scores(s1.value().ptr() + r * n, s2.value().ptr() + r * n, n, k, idx.data() + r * k,
                            scratch.data());
    const Var w = ops::softmax(ops::pair_scores(s1, s2, idx, k));
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < k; ++j) {
        last_indices_[(r * heads + h) * k + j] = idx[r * k + j];
        last_weights_[(r * heads + h) * k + j] = w.value()[r * k + j];
      }
    const Var read = ops::sparse_rows(w, idx, *values_);
    out = out.defined() ? ops::add(out, read) : read;
  }
  out = ops::dropout(out, cfg_.value_dropout, dropout_rng_, is_training());
  if (norm_) out = norm_->forward(out);
  Shape out_shape = in_shape;
  out_shape.back() = cfg_.value_dim;
  return ops::reshape(out, out_shape);
}

std::vector<std::int64_t> memory_usage_stats(std::span<const std::int64_t> indices, std::int64_t rows) {
  std::vector<std::int64_t> hist(static_cast<std::size_t>(rows), 0);
  for (auto i : indices) {
    require(i >= 0 && i < rows, "memory_usage_stats: index out of range");
    ++hist[static_cast<std::size_t>(i)];
  }
  return hist;
}

nlohmann::json usage_to_json(const std::vector<std::int64_t>& histogram) {
  std::int64_t total = 0, used = 0;
  for (auto c : histogram) {
    total += c;
    used += c > 0;
  }
  return {{"rows", histogram.size()}, {"total", total}, {"rows_used", used}, {"histogram", histogram}};
}

}  // namespace spotfast
