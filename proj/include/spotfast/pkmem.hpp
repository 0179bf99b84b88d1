#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"
#include "spotfast/module.hpp"

namespace spotfast {

struct MemoryConfig {
  std::int64_t heads = 4;
  std::int64_t key_dim = 128;
  std::int64_t slots = 168;  // n; the value table has n*n rows
  std::int64_t k = 32;
  std::int64_t value_dim = 512;
  double value_dropout = 0.1;
  bool query_batchnorm = true;
  bool output_layernorm = true;
  bool layernorm_affine = true;

  void validate() const;
};

struct TopK {
  std::vector<std::int64_t> indices;  // flat i * n + j
  std::vector<double> scores;
};

/// Exact top-k of s1[i] + s2[j] over all (i, j), ordered by score descending
/// and then by flat index ascending. s1 and s2 both have n entries.
void topk_from_half_scores(const double* s1, const double* s2, std::int64_t n, std::int64_t k,
                           std::int64_t* out_idx, double* out_scores);

/// q [key_dim], sub1/sub2 [n, key_dim/2]. The first half of q scores sub1,
/// the second half scores sub2.
TopK topk_product_keys(std::span<const double> q, const Tensor& sub1, const Tensor& sub2, std::int64_t k);

class ProductKeyMemory : public Module {
 public:
  ProductKeyMemory(std::int64_t input_dim, const MemoryConfig& cfg, std::mt19937_64& rng);

  /// x [..., input_dim] -> [..., value_dim].
  Var forward(const Var& x);

  const MemoryConfig& config() const { return cfg_; }
  Var& values() { return *values_; }
  Var& sub_keys(std::int64_t head, int half) { return *sub_keys_.at(2 * head + half); }
  Linear& query_proj(std::int64_t head) { return *query_.at(head); }
  std::int64_t rows() const { return cfg_.slots * cfg_.slots; }
  void reseed(std::uint64_t seed) { dropout_rng_.seed(seed); }

  /// Selections of the last forward, laid out [rows, heads, k].
  const std::vector<std::int64_t>& last_indices() const { return last_indices_; }
  /// Softmax weights of the last forward, same layout.
  const std::vector<double>& last_weights() const { return last_weights_; }

 private:
  MemoryConfig cfg_;
  std::int64_t input_dim_;
  std::vector<std::unique_ptr<Linear>> query_;
  std::vector<std::unique_ptr<BatchNorm>> query_bn_;
  std::vector<Var*> sub_keys_;
  Var* values_;
  std::unique_ptr<LayerNorm> norm_;
  std::mt19937_64 dropout_rng_;
  std::vector<std::int64_t> last_indices_;
  std::vector<double> last_weights_;
};

inline Var memory_read(ProductKeyMemory& mem, const Var& x) { return mem.forward(x); }

/// Selection counts per value row; the total equals indices.size().
std::vector<std::int64_t> memory_usage_stats(std::span<const std::int64_t> indices, std::int64_t rows);

nlohmann::json usage_to_json(const std::vector<std::int64_t>& histogram);

}  // namespace spotfast
