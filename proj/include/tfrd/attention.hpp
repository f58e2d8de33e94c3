#pragma once

#include <string>
#include <vector>

#include "tfrd/ops.hpp"

namespace tfrd {

namespace detail {

template <typename T>
void check_attention_inputs(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const char* op) {
  require_rank(q.shape(), 2, op);
  require_rank(k.shape(), 2, op);
  require_rank(v.shape(), 2, op);
  if (k.dim(0) != v.dim(0)) {
    throw ShapeError(std::string(op) + ": keys " + shape_string(k.shape()) + " and values " +
                     shape_string(v.shape()) + " need the same number of positions");
  }
  if (q.dim(1) != k.dim(1) || k.dim(1) != v.dim(1)) {
    throw ShapeError(std::string(op) + ": channel mismatch between Q " + shape_string(q.shape()) + ", K " +
                     shape_string(k.shape()) + ", V " + shape_string(v.shape()));
  }
}

}  // namespace detail

/// softmax_rows(Q K^T) V. Materializes the n_Q x n_P weight matrix.
template <typename T>
Tensor<T> dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  detail::check_attention_inputs(q, k, v, "dot_product_attention");
  return matmul(softmax(matmul(q, transpose(k)), Axis::Row), v);
}

/// softmax_rows(Q) (softmax_cols(K)^T V). The largest intermediate is
/// c x c (plus the n x c transposed keys), so cost is linear in positions.
template <typename T>
Tensor<T> efficient_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  detail::check_attention_inputs(q, k, v, "efficient_attention");
  auto context = matmul(transpose(softmax(k, Axis::Column)), v);
  return matmul(softmax(q, Axis::Row), context);
}

/// Affine map x W + b with W[in x out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

template <typename T>
struct AttentionWeights {
  Linear<T> query, key, value, output;
};

/// Projects Q/K/V, splits channels into `heads` groups, runs efficient
/// attention per group, concatenates and applies the output projection.
template <typename T>
Tensor<T> multi_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                     const AttentionWeights<T>& w) {
  detail::check_attention_inputs(q, k, v, "multi_head");
  const std::size_t c = q.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("multi_head: " + std::to_string(c) + " channels cannot be split into " +
                      std::to_string(heads) + " heads");
  }
  auto qp = w.query(q);
  auto kp = w.key(k);
  auto vp = w.value(v);
  if (heads == 1) return w.output(efficient_attention(qp, kp, vp));
  const std::size_t width = c / heads;
  std::vector<Tensor<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outputs.push_back(efficient_attention(slice_cols(qp, h * width, width), slice_cols(kp, h * width, width),
                                          slice_cols(vp, h * width, width)));
  }
  return w.output(concat_cols(outputs));
}

}  // namespace tfrd
