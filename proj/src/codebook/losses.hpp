#pragma once

#include <span>

#include "numerics/ops.hpp"

namespace stylecode::codebook {

using nn::Tensor;

// (1/B) sum_i [ y_i (1 - s_i)^2 + (1 - y_i) relu(s_i - m)^2 ],
// s_i = cosine(a_i, b_i) over rows of (B, D) inputs.
// zero_norm_rows, when given, receives the number of rows whose norm hit the eps floor.
template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& pooled_a, const Tensor<T>& pooled_b, std::span<const int> labels,
                           double margin, std::size_t* zero_norm_rows = nullptr);

// Mean over rows of (1 - cosine)^2, or of cosine^2 when literal is set.
template <typename T>
Tensor<T> recon_loss(const Tensor<T>& embedding, const Tensor<T>& features, bool literal = false);

// Mean over rows of |sg(ze) - e|^2 + commit |ze - sg(e)|^2.
template <typename T>
Tensor<T> vq_loss(const Tensor<T>& encoder_out, const Tensor<T>& selected, double commit);

struct LossWeights {
    double alpha = 1.0;  // recon
    double beta = 1.0;   // vq
    double margin = 0.3;
    double commit = 0.25;
    bool literal_recon = false;
};

template <typename T>
struct StyleLoss {
    Tensor<T> contrastive, recon, vq, total;
};

// L_contrast + alpha L_recon + beta L_vq for a batch of B pairs with T tokens each.
// embedding: (B*T, D) decoded tokens of the first images; features1: (B*T, D) their features;
// pooled_second: (B, D) pooled features of the second images; encoder_out / selected: (B*T, d).
template <typename T>
StyleLoss<T> style_loss(const Tensor<T>& embedding, const Tensor<T>& features1, const Tensor<T>& pooled_second,
                        const Tensor<T>& encoder_out, const Tensor<T>& selected, std::span<const int> labels,
                        const LossWeights& weights, std::size_t* zero_norm_rows = nullptr);

} // namespace stylecode::codebook
