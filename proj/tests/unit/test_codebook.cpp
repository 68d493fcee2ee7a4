#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "codebook/codebook.hpp"
#include "codebook/losses.hpp"
#include "loss_cases.hpp"

using namespace stylecode;
using namespace stylecode::codebook;
using TD = nn::Tensor<double>;

namespace {

// Independent nearest-neighbour scan: full distance table, then first minimum.
std::vector<std::int32_t> brute_force(const std::vector<float>& codes, std::span<const float> words, std::size_t d) {
    const std::size_t n = codes.size() / d, k = words.size() / d;
    std::vector<std::int32_t> out;
    for (std::size_t r = 0; r < n; ++r) {
        std::vector<double> dist(k, 0.0);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = static_cast<double>(codes[r * d + j]) - words[i * d + j];
                dist[i] += diff * diff;
            }
        out.push_back(static_cast<std::int32_t>(std::min_element(dist.begin(), dist.end()) - dist.begin()));
    }
    return out;
}

TD row(std::initializer_list<double> v) { return TD::from_data({1, v.size()}, std::vector<double>(v)); }

double contrast(std::initializer_list<double> a, std::initializer_list<double> b, int y, double m) {
    const int labels[] = {y};
    return contrastive_loss(row(a), row(b), labels, m).item();
}

PatchFeatures random_features(std::size_t t, std::size_t d, CounterRng& rng) {
    PatchFeatures f{t, d, std::vector<float>(t * d)};
    for (auto& v : f.values) v = static_cast<float>(rng.normal());
    return f;
}

} // namespace

TEST_CASE("quantizer picks an exactly matching codeword") {
    Codebook cb(CodebookConfig{});
    CounterRng rng(1);
    const auto f = random_features(16, 64, rng);
    const auto z = cb.encode_tokens(f);
    auto cw = cb.codewords().mutable_data();
    std::copy(z.begin() + 5 * 16, z.begin() + 6 * 16, cw.begin() + 7 * 16);
    CHECK(cb.quantize(f).indices[5] == 7);
}

TEST_CASE("quantizer equals exhaustive nearest neighbour including ties") {
    CodebookConfig cfg;
    cfg.codewords = 32;
    cfg.code_dim = 4;
    Codebook cb(cfg);
    CounterRng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        auto cw = cb.codewords().mutable_data();
        for (auto& v : cw) v = static_cast<float>(rng.normal());
        // duplicate codewords and coarse values force exact ties
        for (int dup = 0; dup < 4; ++dup) {
            const auto from = rng.uniform_int(32), to = rng.uniform_int(32);
            std::copy_n(cw.begin() + static_cast<std::ptrdiff_t>(from * 4), 4, cw.begin() + static_cast<std::ptrdiff_t>(to * 4));
        }
        std::vector<float> codes(16 * 4);
        for (std::size_t i = 0; i < codes.size(); ++i)
            codes[i] = trial % 2 ? static_cast<float>(rng.uniform_int(3)) - 1.0f : static_cast<float>(rng.normal());
        if (trial % 2) for (auto& v : cw) v = std::round(v);
        REQUIRE(cb.nearest(codes, 16) == brute_force(codes, cb.codewords().data(), 4));
    }
}

TEST_CASE("identical tokens quantize identically") {
    Codebook cb(CodebookConfig{});
    CounterRng rng(3);
    auto f = random_features(16, 64, rng);
    std::copy_n(f.row(2), 64, f.values.begin() + 9 * 64);
    const auto q = cb.quantize(f);
    CHECK(q.indices[2] == q.indices[9]);
    for (auto i : q.indices) CHECK(static_cast<std::size_t>(i) < cb.size());
    CHECK_THROWS_AS(cb.quantize(random_features(16, 32, rng)), nn::ShapeError);
}

TEST_CASE("contrastive loss closed forms") {
    CHECK(std::abs(contrast({1, 2}, {2, 4}, 1, 0.3)) <= 1e-9);
    CHECK(std::abs(contrast({1, 0}, {0, 1}, 0, 0.3)) <= 1e-9);
    CHECK(std::abs(contrast({1, 0}, {0.3, std::sqrt(1 - 0.09)}, 0, 0.3)) <= 1e-9);
    // s = 0.8 = m + 0.5
    CHECK(std::abs(contrast({1, 0}, {0.8, 0.6}, 0, 0.3) - 0.25) <= 1e-9);
    CHECK(std::abs(contrast({1, 0}, {0, 1}, 1, 0.3) - 1.0) <= 1e-9);
}

TEST_CASE("contrastive loss is zero exactly when every pair is satisfied") {
    CounterRng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t b = 6;
        std::vector<int> labels(b);
        std::vector<double> a, c;
        bool satisfied = true;
        for (std::size_t i = 0; i < b; ++i) {
            labels[i] = static_cast<int>(rng.uniform_int(2));
            const double ang = rng.uniform() * 3.14159;
            const bool exact = rng.bernoulli(0.5);
            a.insert(a.end(), {1.0, 0.0});
            if (labels[i] == 1 && exact) c.insert(c.end(), {2.0, 0.0});
            else c.insert(c.end(), {std::cos(ang), std::sin(ang)});
            const double s = (labels[i] == 1 && exact) ? 1.0 : std::cos(ang);
            satisfied &= labels[i] == 1 ? s == 1.0 : s <= 0.3;
        }
        const double loss = contrastive_loss(TD::from_data({b, 2}, a), TD::from_data({b, 2}, c), labels, 0.3).item();
        if (satisfied) CHECK(loss == 0.0);
        else CHECK(loss > 0.0);
    }
}

TEST_CASE("reconstruction loss closed forms and scalar oracle") {
    CHECK(std::abs(recon_loss(TD::from_data({2, 2}, {1, 2, -3, 1}), TD::from_data({2, 2}, {2, 4, -6, 2})).item()) <= 1e-9);
    CHECK(std::abs(recon_loss(TD::from_data({2, 2}, {1, 0, 0, 1}), TD::from_data({2, 2}, {0, 3, 5, 0})).item() - 1.0) <= 1e-9);
    CHECK(std::abs(recon_loss(TD::from_data({2, 2}, {1, 0, 0, 1}), TD::from_data({2, 2}, {0, 3, 5, 0}), true).item()) <= 1e-9);
    CounterRng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto e = gradcheck::random_tensor({9, 6}, rng), f = gradcheck::random_tensor({9, 6}, rng);
        double expect = 0;
        for (std::size_t t = 0; t < 9; ++t) {
            double dot = 0, ne = 0, nf = 0;
            for (std::size_t j = 0; j < 6; ++j) {
                dot += e.at(t * 6 + j) * f.at(t * 6 + j);
                ne += e.at(t * 6 + j) * e.at(t * 6 + j);
                nf += f.at(t * 6 + j) * f.at(t * 6 + j);
            }
            const double c = dot / (std::sqrt(ne) * std::sqrt(nf));
            expect += (1 - c) * (1 - c) / 9;
        }
        CHECK(std::abs(recon_loss(e, f).item() - expect) <= 1e-12);
    }
}

TEST_CASE("vq loss closed forms") {
    const auto z = TD::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(vq_loss(z, z.clone(), 0.25).item() == 0.0);
    // every token offset by distance delta = 0.5 along a different axis
    const auto e = TD::from_data({2, 3}, {1.5, 2, 3, 4, 5, 5.5});
    CHECK(std::abs(vq_loss(z, e, 0.25).item() - 0.25 * 1.25) <= 1e-12);
}

TEST_CASE("codebook losses match finite differences") {
    CounterRng rng(6);
    for (const auto& c : gradcheck::codebook_loss_cases()) {
        CAPTURE(c.name);
        double worst = 0;
        for (int trial = 0; trial < 20; ++trial) worst = std::max(worst, gradcheck::case_error(c, rng));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("vq commit term gradient only reaches the encoder output") {
    CounterRng rng(7);
    auto z = gradcheck::random_tensor({4, 3}, rng), e = gradcheck::random_tensor({4, 3}, rng);
    e.set_requires_grad(false);
    auto fn = [](const std::vector<TD>& in) { return vq_loss(in[0], in[1], 0.25); };
    auto commit_only = [](const std::vector<TD>& in, std::size_t) { return 0.25 * gradcheck::mean_sq_dist(in[0], in[1]); };
    CHECK(gradcheck::max_relative_error(fn, {z, e}, 1e-5, commit_only) < 1e-4);
    z.zero_grad();
    nn::backward(vq_loss(z, e, 0.0));
    for (auto g : z.grad()) CHECK(g == 0.0);
}

TEST_CASE("style loss bookkeeping") {
    CounterRng rng(8);
    const auto emb = gradcheck::random_tensor({8, 5}, rng), v1 = gradcheck::random_tensor({8, 5}, rng);
    const auto ze = gradcheck::random_tensor({8, 3}, rng), e = gradcheck::random_tensor({8, 3}, rng);
    const auto pooled_emb = nn::mean(nn::reshape(emb, {2, 4, 5}), 1);
    const int positives[] = {1, 1};

    LossWeights zero{0, 0, 0.3, 0.25, false};
    const auto perfect = style_loss(emb, v1, pooled_emb.detach(), ze, e, positives, zero);
    CHECK(std::abs(perfect.total.item()) <= 1e-12);

    LossWeights w{0.7, 1.3, 0.3, 0.25, false};
    const int labels[] = {1, 0};
    const auto l = style_loss(emb, v1, gradcheck::random_tensor({2, 5}, rng), ze, e, labels, w);
    CHECK(std::abs(l.contrastive.item() + 0.7 * l.recon.item() + 1.3 * l.vq.item() - l.total.item()) <= 1e-6);
}

TEST_CASE("codebook training separates styles and encodes deterministically") {
    const auto ds = world::build_dataset({12, 12, 32, 5});
    FeatureExtractor fx(ExtractorConfig{});
    const auto feats = extract_all(fx, ds);
    CodebookConfig cfg;
    cfg.codewords = 64;
    Codebook cb(cfg);
    CHECK_THROWS_AS(cb.encode(feats[0]), std::logic_error);

    CodebookTrainer trainer(cb, ds, feats);
    CounterRng rng(9);
    trainer.init_codewords(rng);
    const auto before = fx.extract(ds.images[0]);
    for (int s = 0; s < 600; ++s) {
        const auto l = trainer.step(rng);
        REQUIRE(std::abs(l.contrastive + l.recon + l.vq - l.total) <= 1e-5);
    }
    cb.mark_trained();
    CHECK(fx.extract(ds.images[0]) == before);

    const auto enc = cb.encode(feats[0]);
    CHECK(enc == cb.encode(feats[0]));
    for (auto i : enc) CHECK(static_cast<std::size_t>(i) < cb.size());
    CHECK(codebook_usage(cb, feats, ds.indices(world::Split::train)) >= 0.1);

    // Hamming agreement of index sequences: same style above different style
    world::PairSampler sampler(ds, world::Split::eval);
    double same = 0, diff = 0;
    for (int i = 0; i < 300; ++i) {
        const auto p = sampler.sample(rng, true), q = sampler.sample(rng, false);
        auto agree = [&](std::size_t a, std::size_t b) {
            const auto x = cb.encode(feats[a]), y = cb.encode(feats[b]);
            int n = 0;
            for (std::size_t t = 0; t < x.size(); ++t) n += x[t] == y[t];
            return n;
        };
        same += agree(p.first, p.second);
        diff += agree(q.first, q.second);
    }
    CHECK(same > diff);
    CHECK(measure_separation(cb, ds, feats, world::Split::eval, 500, 1).gap() > 0.2);
}

TEST_CASE("codebook tensors round-trip through the checkpoint format") {
    Codebook a(CodebookConfig{});
    CounterRng rng(10);
    for (auto& v : a.codewords().mutable_data()) v = static_cast<float>(rng.normal());
    Codebook b(CodebookConfig{});
    b.load(a.records());
    CHECK(b.trained());
    for (const auto& [pa, pb] : {std::pair{a.parameters(), b.parameters()}})
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa[i].name == pb[i].name);
            CHECK(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
        }
    CodebookConfig smaller;
    smaller.codewords = 64;
    Codebook c(smaller);
    CHECK_THROWS_AS(c.load(a.records()), nn::FormatError);
}
