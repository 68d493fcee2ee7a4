#pragma once

#include <cmath>
#include <string>

#include "numerics/ops.hpp"
#include "numerics/rng.hpp"

namespace stylecode::nn {

template <typename T>
Tensor<T> randn(Shape shape, double stddev, CounterRng& rng, bool requires_grad = true) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
    return Tensor<T>::from_data(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
struct Linear {
    Tensor<T> weight;  // (in, out)
    Tensor<T> bias;    // (out)

    Linear() = default;
    Linear(std::size_t in, std::size_t out, CounterRng& rng, double gain = 1.0)
        : weight(randn<T>({in, out}, gain / std::sqrt(static_cast<double>(in)), rng)),
          bias(Tensor<T>::zeros({out}, true)) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width)
        : gamma(Tensor<T>::full({width}, T(1), true)), beta(Tensor<T>::zeros({width}, true)) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

// Multi-head attention over (B, N, W) queries and (B, M, W) context.
template <typename T>
struct Attention {
    std::size_t heads = 1;
    Linear<T> query, key, value, output;

    Attention() = default;
    Attention(std::size_t width, std::size_t num_heads, CounterRng& rng)
        : heads(num_heads),
          query(width, width, rng),
          key(width, width, rng),
          value(width, width, rng),
          output(width, width, rng, 0.5) {
        if (num_heads == 0 || width % num_heads != 0)
            throw ShapeError("attention width " + std::to_string(width) + " not divisible by " +
                             std::to_string(num_heads) + " heads");
    }

    // `mask`, when given, is an additive (N, M) bias (e.g. causal -1e9 entries).
    Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& context, const Tensor<T>* mask = nullptr) const {
        const std::size_t b = x.dim(0), n = x.dim(1), m = context.dim(1), w = x.dim(2);
        const std::size_t dh = w / heads;
        auto split = [&](const Tensor<T>& t, std::size_t len) {
            return reshape(permute(reshape(t, {b, len, heads, dh}), {0, 2, 1, 3}), {b * heads, len, dh});
        };
        auto q = split(query(x), n);
        auto k = split(key(context), m);
        auto v = split(value(context), m);
        auto scores = scale(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (mask) scores = add(scores, *mask);
        auto mixed = matmul(softmax(scores), v);
        auto merged = reshape(permute(reshape(mixed, {b, heads, n, dh}), {0, 2, 1, 3}), {b, n, w});
        return output(merged);
    }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        query.collect(prefix + ".q", out);
        key.collect(prefix + ".k", out);
        value.collect(prefix + ".v", out);
        output.collect(prefix + ".o", out);
    }
};

template <typename T>
struct FeedForward {
    Linear<T> up, down;

    FeedForward() = default;
    FeedForward(std::size_t width, std::size_t hidden, CounterRng& rng)
        : up(width, hidden, rng), down(hidden, width, rng, 0.5) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return down(gelu(up(x))); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        up.collect(prefix + ".up", out);
        down.collect(prefix + ".down", out);
    }
};

// Additive causal mask: 0 on and below the diagonal, -1e9 above.
template <typename T>
Tensor<T> causal_mask(std::size_t n) {
    std::vector<T> data(n * n, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) data[i * n + j] = static_cast<T>(-1e9);
    return Tensor<T>::from_data({n, n}, std::move(data));
}

} // namespace stylecode::nn
