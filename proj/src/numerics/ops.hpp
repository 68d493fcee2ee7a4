#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "numerics/tensor.hpp"

namespace stylecode::nn {

// Differentiable operations. Every op validates shapes (ShapeError) and
// rejects non-finite inputs (NonFiniteError). Broadcasting is limited to
// suffix broadcasting: `b` may have the trailing dims of `a`.

// (m,k)x(k,n); (B,m,k)x(B,k,n) batched; (...,k)x(k,n) applied row-wise.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, double factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, double value);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
// tanh approximation
template <typename T> Tensor<T> gelu(const Tensor<T>& x);

// Normalizes over the last axis; gamma/beta have the last-axis length.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

// Softmax over the last axis with max subtraction.
template <typename T> Tensor<T> softmax(const Tensor<T>& x);

// Rows of table (V,W) selected by ids -> (ids.size(), W).
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids);

template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

// Full reductions return shape (1).
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Reduction over one axis, which is removed from the shape.
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis);

// Cosine over the last axis, each norm floored at kEps. Output drops the last axis
// (a rank-1 input gives shape (1)).
template <typename T> Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b);

// Mean squared error over all elements, shape (1).
template <typename T> Tensor<T> mse(const Tensor<T>& prediction, const Tensor<T>& target);

// Mean token cross-entropy of logits (N,C) against class ids.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);

// Forward value of `quantized`, gradient routed unchanged to `continuous`.
template <typename T>
Tensor<T> straight_through(const Tensor<T>& continuous, const Tensor<T>& quantized);

} // namespace stylecode::nn
