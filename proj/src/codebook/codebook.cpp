#include "codebook/codebook.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

#include "codebook/losses.hpp"

namespace stylecode::codebook {

using nn::Tensor;

Codebook::Codebook(const CodebookConfig& config) : config_(config) {
    if (config.codewords < 2) throw std::invalid_argument("codebook needs K >= 2");
    if (config.code_dim < 1 || config.feature_dim < 1) throw std::invalid_argument("codebook dimensions must be positive");
    if (config.margin <= 0 || config.margin >= 1) throw std::invalid_argument("margin must lie in (0, 1)");
    if (config.alpha < 0 || config.beta < 0 || config.commit < 0) throw std::invalid_argument("loss weights must be >= 0");
    CounterRng rng(config.seed, 0);
    encoder_ = nn::Linear<float>(feature_dim(), code_dim(), rng);
    decoder_ = nn::Linear<float>(code_dim(), feature_dim(), rng);
    codewords_ = nn::randn<float>({size(), code_dim()}, 1.0, rng);
}

nn::ParamList<float> Codebook::parameters() const {
    nn::ParamList<float> out{{"cb.codewords", codewords_}};
    encoder_.collect("cb.enc", out);
    decoder_.collect("cb.dec", out);
    return out;
}

std::vector<std::int32_t> Codebook::nearest(std::span<const float> codes, std::size_t rows) const {
    const std::size_t d = code_dim(), k = size();
    if (codes.size() != rows * d) throw nn::ShapeError("quantize: expected rows x " + std::to_string(d) + " codes");
    const auto cw = codewords_.data();
    std::vector<std::int32_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t i = 0; i < k; ++i) {
            double dist = 0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = static_cast<double>(codes[r * d + j]) - cw[i * d + j];
                dist += diff * diff;
            }
            if (dist < best) {  // strict: earlier index wins ties
                best = dist;
                arg = i;
            }
        }
        out[r] = static_cast<std::int32_t>(arg);
    }
    return out;
}

std::vector<float> Codebook::encode_tokens(const PatchFeatures& features) const {
    if (features.dim != feature_dim())
        throw nn::ShapeError("codebook expects " + std::to_string(feature_dim()) + "-wide features, got " +
                             std::to_string(features.dim));
    nn::NoGradGuard guard;
    const auto unit = normalize_tokens(features);
    const auto x = Tensor<float>::from_data({unit.tokens, unit.dim}, unit.values);
    const auto z = encoder_(x);
    return {z.data().begin(), z.data().end()};
}

PatchFeatures Codebook::decode(std::span<const std::int32_t> indices) const {
    check_indices(indices);
    nn::NoGradGuard guard;
    const auto e = nn::embedding_lookup(codewords_, indices);
    const auto y = decoder_(e);
    return {indices.size(), feature_dim(), {y.data().begin(), y.data().end()}};
}

Quantized Codebook::quantize(const PatchFeatures& features) const {
    const auto z = encode_tokens(features);
    Quantized q;
    q.indices = nearest(z, features.tokens);
    const auto cw = codewords_.data();
    for (auto i : q.indices) q.codes.insert(q.codes.end(), cw.begin() + i * code_dim(), cw.begin() + (i + 1) * code_dim());
    q.embedding = decode(q.indices);
    return q;
}

std::vector<std::int32_t> Codebook::encode(const PatchFeatures& features) const {
    if (!trained_) throw std::logic_error("codebook has not been trained");
    return nearest(encode_tokens(features), features.tokens);
}

void Codebook::check_indices(std::span<const std::int32_t> indices) const {
    for (auto i : indices)
        if (i < 0 || static_cast<std::size_t>(i) >= size())
            throw std::out_of_range("style index " + std::to_string(i) + " outside [0, " + std::to_string(size()) + ")");
}

std::vector<nn::TensorRecord> Codebook::records() const {
    auto out = nn::to_records(parameters());
    out.push_back(nn::u64_record("cb.shape", {size(), code_dim(), feature_dim()}));
    return out;
}

void Codebook::load(const std::vector<nn::TensorRecord>& records) {
    const auto shape = nn::record_u64(nn::require_record(records, "cb.shape"));
    if (shape != std::vector<std::uint64_t>{size(), code_dim(), feature_dim()})
        throw nn::FormatError("checkpoint codebook shape does not match the config");
    nn::assign_records(records, parameters());
    trained_ = true;
}

std::vector<PatchFeatures> extract_all(const FeatureExtractor& extractor, const world::Dataset& dataset) {
    std::vector<PatchFeatures> out;
    out.reserve(dataset.images.size());
    for (const auto& img : dataset.images) out.push_back(normalize_tokens(extractor.extract(img)));
    return out;
}

namespace {

LossWeights weights(const CodebookConfig& c) {
    return {c.alpha, c.beta, c.margin, c.commit, c.literal_recon};
}

nn::AdamOptions adam_options(const CodebookConfig& c) {
    nn::AdamOptions o;
    o.learning_rate = c.learning_rate;
    return o;
}

// Stacks the token rows of the given images into an (n * T, D) block.
Tensor<float> stack_tokens(const std::vector<PatchFeatures>& features, const std::vector<std::size_t>& ids) {
    const std::size_t t = features.at(ids.front()).tokens, d = features.at(ids.front()).dim;
    std::vector<float> data;
    data.reserve(ids.size() * t * d);
    for (auto i : ids) data.insert(data.end(), features[i].values.begin(), features[i].values.end());
    return Tensor<float>::from_data({ids.size() * t, d}, std::move(data));
}

} // namespace

CodebookTrainer::CodebookTrainer(Codebook& codebook, const world::Dataset& dataset,
                                 const std::vector<PatchFeatures>& features)
    : codebook_(codebook),
      dataset_(dataset),
      features_(features),
      sampler_(dataset, world::Split::train),
      adam_(codebook.parameters(), adam_options(codebook.config())) {
    if (features.size() != dataset.images.size()) throw std::invalid_argument("feature cache does not cover the dataset");
}

void CodebookTrainer::init_codewords(CounterRng& rng) {
    const auto train = dataset_.indices(world::Split::train);
    const std::size_t k = codebook_.size(), d = codebook_.code_dim();
    auto cw = codebook_.codewords().mutable_data();
    for (std::size_t i = 0; i < k; ++i) {
        const auto& f = features_[train[rng.uniform_int(train.size())]];
        const std::size_t t = rng.uniform_int(f.tokens);
        PatchFeatures one{1, f.dim, {f.row(t), f.row(t) + f.dim}};
        const auto z = codebook_.encode_tokens(one);
        std::copy(z.begin(), z.end(), cw.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
}

LossBreakdown CodebookTrainer::step(CounterRng& rng) {
    const auto& cfg = codebook_.config();
    std::vector<world::ImagePair> pairs;
    for (int i = 0; i < cfg.batch; ++i)
        pairs.push_back(sampler_.sample(rng, cfg.use_negatives ? rng.bernoulli(0.5) : true));
    return step_on(pairs);
}

LossBreakdown CodebookTrainer::step_on(const std::vector<world::ImagePair>& pairs) {
    const auto& cfg = codebook_.config();
    const std::size_t b = pairs.size();
    const std::size_t t = features_.front().tokens, dim = codebook_.feature_dim();
    std::vector<std::size_t> first, second;
    std::vector<int> labels;
    for (const auto& p : pairs) {
        first.push_back(p.first);
        second.push_back(p.second);
        labels.push_back(p.label);
    }
    const auto v1 = stack_tokens(features_, first);
    const auto v2 = stack_tokens(features_, second);

    const auto ze = codebook_.encoder()(v1);
    const auto idx = codebook_.nearest(ze.data(), b * t);
    const auto e = nn::embedding_lookup(codebook_.codewords(), idx);
    const auto emb = codebook_.decoder()(nn::straight_through(ze, e));

    const auto pooled_v2 = nn::mean(nn::reshape(v2, {b, t, dim}), 1);
    std::size_t zero_rows = 0;
    const auto loss = style_loss(emb, v1, pooled_v2, ze, e, labels, weights(cfg), &zero_rows);
    if (zero_rows) std::fprintf(stderr, "warning: %zu pooled vectors with zero norm in contrastive batch\n", zero_rows);
    const auto& lc = loss.contrastive;
    const auto& lr = loss.recon;
    const auto& lv = loss.vq;
    const auto& total = loss.total;

    LossBreakdown out{lc.item(), lr.item(), lv.item(), total.item()};
    if (!std::isfinite(out.total))
        throw nn::NonFiniteError("codebook loss is not finite (contrastive " + std::to_string(out.contrastive) +
                                 ", recon " + std::to_string(out.recon) + ", vq " + std::to_string(out.vq) + ")");
    nn::backward(total);
    adam_.step();
    return out;
}

double cosine(std::span<const float> a, std::span<const float> b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    return d / (std::max(std::sqrt(na), nn::kEps) * std::max(std::sqrt(nb), nn::kEps));
}

Separation measure_separation(const Codebook& codebook, const world::Dataset& dataset,
                              const std::vector<PatchFeatures>& features, world::Split split, int pairs,
                              std::uint64_t seed) {
    world::PairSampler sampler(dataset, split);
    CounterRng rng(seed, 7);
    std::vector<std::vector<float>> cache(dataset.images.size());
    auto pooled_of = [&](std::size_t i) -> const std::vector<float>& {
        if (cache[i].empty()) cache[i] = pooled(codebook.quantize(features[i]).embedding);
        return cache[i];
    };
    Separation s;
    for (int i = 0; i < pairs; ++i) {
        const auto pos = sampler.sample(rng, true);
        const auto neg = sampler.sample(rng, false);
        s.positive += cosine(pooled_of(pos.first), pooled_of(pos.second));
        s.negative += cosine(pooled_of(neg.first), pooled_of(neg.second));
    }
    s.positive /= pairs;
    s.negative /= pairs;
    return s;
}

double codebook_usage(const Codebook& codebook, const std::vector<PatchFeatures>& features,
                      const std::vector<std::size_t>& images) {
    std::vector<bool> used(codebook.size(), false);
    for (auto i : images)
        for (auto idx : codebook.nearest(codebook.encode_tokens(features[i]), features[i].tokens))
            used[static_cast<std::size_t>(idx)] = true;
    return static_cast<double>(std::count(used.begin(), used.end(), true)) / static_cast<double>(used.size());
}

} // namespace stylecode::codebook
