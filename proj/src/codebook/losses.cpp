#include "codebook/losses.hpp"

#include <cmath>

namespace stylecode::codebook {

namespace {

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return nn::mul(x, x);
}

template <typename T>
Tensor<T> row_sq_norm_mean(const Tensor<T>& diff) {
    return nn::scale(nn::sum(square(diff)), 1.0 / static_cast<double>(diff.dim(0)));
}

} // namespace

template <typename T>
Tensor<T> contrastive_loss(const Tensor<T>& pooled_a, const Tensor<T>& pooled_b, std::span<const int> labels,
                           double margin, std::size_t* zero_norm_rows) {
    if (pooled_a.rank() != 2 || labels.size() != pooled_a.dim(0))
        throw nn::ShapeError("contrastive_loss: expected (B, D) inputs and B labels");
    if (zero_norm_rows) {
        std::size_t n = 0;
        const std::size_t w = pooled_a.dim(1);
        for (const auto* t : {&pooled_a, &pooled_b})
            for (std::size_t r = 0; r < t->dim(0); ++r) {
                double s = 0;
                for (std::size_t j = 0; j < w; ++j) s += static_cast<double>(t->at(r * w + j)) * t->at(r * w + j);
                if (std::sqrt(s) <= nn::kEps) ++n;
            }
        *zero_norm_rows = n;
    }
    std::vector<T> y(labels.size()), not_y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("contrastive labels must be 0 or 1");
        y[i] = static_cast<T>(labels[i]);
        not_y[i] = static_cast<T>(1 - labels[i]);
    }
    const auto b = labels.size();
    const auto s = nn::cosine_similarity(pooled_a, pooled_b);
    const auto pos = nn::mul(Tensor<T>::from_data({b}, std::move(y)), square(nn::add_scalar(nn::scale(s, -1.0), 1.0)));
    const auto neg = nn::mul(Tensor<T>::from_data({b}, std::move(not_y)), square(nn::relu(nn::add_scalar(s, -margin))));
    return nn::mean(nn::add(pos, neg));
}

template <typename T>
Tensor<T> recon_loss(const Tensor<T>& embedding, const Tensor<T>& features, bool literal) {
    const auto c = nn::cosine_similarity(embedding, features);
    return nn::mean(square(literal ? c : nn::add_scalar(nn::scale(c, -1.0), 1.0)));
}

template <typename T>
Tensor<T> vq_loss(const Tensor<T>& encoder_out, const Tensor<T>& selected, double commit) {
    if (encoder_out.shape() != selected.shape() || encoder_out.rank() != 2)
        throw nn::ShapeError("vq_loss: encoder output and codewords must both be (N, d)");
    const auto codebook_term = row_sq_norm_mean(nn::sub(encoder_out.detach(), selected));
    const auto commit_term = row_sq_norm_mean(nn::sub(encoder_out, selected.detach()));
    return nn::add(codebook_term, nn::scale(commit_term, commit));
}

template <typename T>
StyleLoss<T> style_loss(const Tensor<T>& embedding, const Tensor<T>& features1, const Tensor<T>& pooled_second,
                        const Tensor<T>& encoder_out, const Tensor<T>& selected, std::span<const int> labels,
                        const LossWeights& weights, std::size_t* zero_norm_rows) {
    const std::size_t b = labels.size();
    if (b == 0 || embedding.rank() != 2 || embedding.dim(0) % b != 0)
        throw nn::ShapeError("style_loss: token rows must be a multiple of the batch size");
    const std::size_t t = embedding.dim(0) / b, d = embedding.dim(1);
    StyleLoss<T> out;
    const auto pooled_first = nn::mean(nn::reshape(embedding, {b, t, d}), 1);
    out.contrastive = contrastive_loss(pooled_first, pooled_second, labels, weights.margin, zero_norm_rows);
    out.recon = recon_loss(embedding, features1, weights.literal_recon);
    out.vq = vq_loss(encoder_out, selected, weights.commit);
    out.total = nn::add(nn::add(out.contrastive, nn::scale(out.recon, weights.alpha)), nn::scale(out.vq, weights.beta));
    return out;
}

#define STYLECODE_INSTANTIATE_LOSSES(T)                                                                       \
    template Tensor<T> contrastive_loss(const Tensor<T>&, const Tensor<T>&, std::span<const int>, double,     \
                                        std::size_t*);                                                        \
    template Tensor<T> recon_loss(const Tensor<T>&, const Tensor<T>&, bool);                                  \
    template Tensor<T> vq_loss(const Tensor<T>&, const Tensor<T>&, double);                                   \
    template StyleLoss<T> style_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                     const Tensor<T>&, std::span<const int>, const LossWeights&, std::size_t*);

STYLECODE_INSTANTIATE_LOSSES(float)
STYLECODE_INSTANTIATE_LOSSES(double)

} // namespace stylecode::codebook
