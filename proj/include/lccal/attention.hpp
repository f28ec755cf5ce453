#pragma once

// Single-head transformer decoder pieces. No positional encoding: outputs
// are invariant to the order of the key/value set.

#include <cmath>
#include <random>
#include <string>

#include "lccal/ops.hpp"
#include "lccal/params.hpp"

namespace lccal::ad {

template <typename T>
void add_linear_params(ParameterSet<T>& ps, const std::string& prefix, int in, int out, std::mt19937_64& rng,
                       double gain = 1.0) {
  ps.add(prefix + ".weight", uniform_init<T>({out, in}, gain * std::sqrt(3.0 / in), rng));
  ps.add(prefix + ".bias", Tensor<T>(Shape{out}));
}

template <typename T>
Var<T> apply_linear(const BoundParameters<T>& p, const std::string& prefix, const Var<T>& x) {
  return linear(x, p[prefix + ".weight"], p[prefix + ".bias"]);
}

template <typename T>
void add_attention_params(ParameterSet<T>& ps, const std::string& prefix, int dim, std::mt19937_64& rng) {
  for (const char* name : {".q", ".k", ".v", ".o"}) add_linear_params(ps, prefix + name, dim, dim, rng);
}

/// Scaled dot-product attention of `queries` [B,Nq,C] over `keys` [B,Nk,C].
template <typename T>
Var<T> attention(const BoundParameters<T>& p, const std::string& prefix, const Var<T>& queries, const Var<T>& keys) {
  const Shape& sq = queries.shape();
  const Shape& sk = keys.shape();
  if (sq.size() != 3 || sk.size() != 3 || sq[0] != sk[0] || sq[2] != sk[2])
    throw ShapeError("attention: incompatible shapes " + shape_str(sq) + " and " + shape_str(sk));
  const Var<T> q = apply_linear(p, prefix + ".q", queries);
  const Var<T> k = apply_linear(p, prefix + ".k", keys);
  const Var<T> v = apply_linear(p, prefix + ".v", keys);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(sq[2])));
  const Var<T> scores = scalar_mul(matmul(q, transpose_last_two(k)), scale);
  const Var<T> weights = softmax_last_dim(scores);
  return apply_linear(p, prefix + ".o", matmul(weights, v));
}

template <typename T>
void add_attention_block_params(ParameterSet<T>& ps, const std::string& prefix, int dim, int ffn_dim,
                                std::mt19937_64& rng) {
  add_attention_params(ps, prefix + ".self", dim, rng);
  add_attention_params(ps, prefix + ".cross", dim, rng);
  add_linear_params(ps, prefix + ".ffn1", dim, ffn_dim, rng);
  add_linear_params(ps, prefix + ".ffn2", ffn_dim, dim, rng);
}

/// queries [B,N2,C], features [B,N1,C] -> [B,N2,C]: query self-attention,
/// cross-attention over the features, then a ReLU feed-forward network,
/// each wrapped in a residual connection.
template <typename T>
Var<T> attention_block(const BoundParameters<T>& p, const std::string& prefix, const Var<T>& queries,
                       const Var<T>& features) {
  Var<T> x = add(queries, attention(p, prefix + ".self", queries, queries));
  x = add(x, attention(p, prefix + ".cross", x, features));
  const Var<T> hidden = relu(apply_linear(p, prefix + ".ffn1", x));
  return add(x, apply_linear(p, prefix + ".ffn2", hidden));
}

}  // namespace lccal::ad
