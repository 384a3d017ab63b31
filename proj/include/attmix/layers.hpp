#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "attmix/autodiff.hpp"
#include "attmix/optim.hpp"
#include "attmix/rng.hpp"
#include "attmix/tensor.hpp"

namespace attmix {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> filled(Shape shape, T value) {
  Tensor<T> t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

// Fully connected layer, weight stored [out x in].
template <typename T>
struct Linear {
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng)
      : weight(fan_in_uniform<T>({out, in}, in, rng)) {
    if (with_bias) bias = filled<T>({out}, T(0));
  }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    Var<T> w = tape.parameter(weight);
    if (bias) return linear(x, w, std::optional<Var<T>>(tape.parameter(*bias)));
    return linear(x, w);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".weight", &weight});
    if (bias) out.push_back({prefix + ".bias", &*bias});
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t d) : gamma(filled<T>({d}, T(1))), beta(filled<T>({d}, T(0))) {}

  Var<T> operator()(Tape<T>& tape, Var<T> x) {
    return layer_norm(x, tape.parameter(gamma), tape.parameter(beta), T(1e-5));
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }
};

// Multi-head attention projections. Weights multiply from the right:
// Q = X W_Q with W_Q [d_model x heads*d_k], output = concat(heads) W_O.
template <typename T>
struct MultiHeadAttention {
  std::size_t heads = 1;
  Tensor<T> w_q, w_k, w_v, w_o;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t n_heads, Rng& rng) : heads(n_heads) {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw DimensionError("attention width " + std::to_string(d_model) +
                           " is not divisible by " + std::to_string(n_heads) + " heads");
    }
    w_q = fan_in_uniform<T>({d_model, d_model}, d_model, rng);
    w_k = fan_in_uniform<T>({d_model, d_model}, d_model, rng);
    w_v = fan_in_uniform<T>({d_model, d_model}, d_model, rng);
    w_o = fan_in_uniform<T>({d_model, d_model}, d_model, rng);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".w_q", &w_q});
    out.push_back({prefix + ".w_k", &w_k});
    out.push_back({prefix + ".w_v", &w_v});
    out.push_back({prefix + ".w_o", &w_o});
  }
};

// Scaled dot-product attention of `queries` [batch*n_q x d] over `keys_values`
// [batch*n_kv x d]; each sample attends only within its own rows.
template <typename T>
Var<T> multi_head_attention(Tape<T>& tape, Var<T> queries, Var<T> keys_values, std::size_t batch,
                            MultiHeadAttention<T>& p, AttentionWeights<T>* weights = nullptr) {
  if (queries.cols() != p.w_q.dim(0) || keys_values.cols() != p.w_k.dim(0)) {
    throw DimensionError("multi_head_attention: token width does not match projection weights");
  }
  Var<T> q = matmul(queries, tape.parameter(p.w_q));
  Var<T> k = matmul(keys_values, tape.parameter(p.w_k));
  Var<T> v = matmul(keys_values, tape.parameter(p.w_v));
  Var<T> heads = attention(q, k, v, batch, p.heads, weights);
  return matmul(heads, tape.parameter(p.w_o));
}

}  // namespace attmix
