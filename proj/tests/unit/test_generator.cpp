#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "generator/ar_model.hpp"
#include "generator/sampler.hpp"

using namespace stylecode;
using namespace stylecode::generator;

namespace {

ARConfig tiny() {
    ARConfig c;
    c.codewords = 16;
    c.length = 8;
    c.width = 32;
    c.blocks = 1;
    c.heads = 2;
    c.batch = 8;
    c.learning_rate = 3e-3;
    return c;
}

// Tokens drawn with probability proportional to 1 / (i + 1).
std::vector<Sequence> skewed_corpus(std::size_t n, const ARConfig& c, std::uint64_t seed) {
    std::vector<double> w(static_cast<std::size_t>(c.codewords));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / static_cast<double>(i + 1);
    const double z = std::accumulate(w.begin(), w.end(), 0.0);
    CounterRng rng(seed);
    std::vector<Sequence> out(n);
    for (auto& s : out)
        for (int t = 0; t < c.length; ++t) {
            double u = rng.uniform() * z, acc = 0;
            std::int32_t pick = c.codewords - 1;
            for (std::size_t i = 0; i < w.size(); ++i) {
                acc += w[i];
                if (u < acc) {
                    pick = static_cast<std::int32_t>(i);
                    break;
                }
            }
            s.push_back(pick);
        }
    return out;
}

} // namespace

TEST_CASE("untrained loss is close to the uniform baseline") {
    const auto c = tiny();
    ARModel m(c);
    const double l = m.loss(skewed_corpus(16, c, 3)).item();
    CHECK(std::abs(l - std::log(16.0)) < 0.1 * std::log(16.0));
}

TEST_CASE("logits are causal") {
    const auto c = tiny();
    ARModel m(c);
    Sequence a{m.bos(), 1, 2, 3, 4}, b{m.bos(), 1, 2, 9, 15};
    const auto la = m.logits({a}), lb = m.logits({b});
    const std::size_t k = m.vocab();
    for (std::size_t p = 0; p < 5; ++p) {
        const bool same = std::equal(la.data().begin() + p * k, la.data().begin() + (p + 1) * k,
                                     lb.data().begin() + p * k);
        CHECK(same == (p < 3));
    }
    // next_logits agrees with the full pass
    const auto nl = m.next_logits(std::vector<std::int32_t>{1, 2});
    for (std::size_t i = 0; i < k; ++i) CHECK(nl[i] == doctest::Approx(la.data()[2 * k + i]).epsilon(1e-6));
}

TEST_CASE("out-of-range indices are rejected") {
    const auto c = tiny();
    ARModel m(c);
    CHECK_THROWS(m.loss({Sequence{0, 1, 2, 3, 4, 5, 6, 16}}));
    CHECK_THROWS(m.loss({Sequence{0, 1, 2}}));
    CHECK_THROWS(count_frequencies({Sequence{0, 16}}, 16));
}

TEST_CASE("a single repeated sequence is memorized") {
    const auto c = tiny();
    ARModel m(c);
    const Sequence s{3, 7, 1, 1, 12, 0, 5, 9};
    ARTrainer tr(m, {s});
    CounterRng rng(5);
    double l = 0;
    for (int i = 0; i < 2000 && (l = tr.step(rng)) > 0.01; ++i) {}
    CHECK(l < 0.01);
}

TEST_CASE("training is deterministic given the seed") {
    const auto c = tiny();
    const auto corpus = skewed_corpus(64, c, 8);
    std::vector<double> runs[2];
    for (auto& r : runs) {
        ARModel m(c);
        ARTrainer tr(m, corpus);
        CounterRng rng(11);
        for (int i = 0; i < 20; ++i) r.push_back(tr.step(rng));
    }
    CHECK(runs[0] == runs[1]);
}

TEST_CASE("held-out perplexity drops below the uniform baseline") {
    const auto c = tiny();
    ARModel m(c);
    ARTrainer tr(m, skewed_corpus(256, c, 1));
    CounterRng rng(2);
    for (int i = 0; i < 300; ++i) tr.step(rng);
    CHECK(perplexity(m, skewed_corpus(64, c, 99)) < 16.0);
}

TEST_CASE("frequency table closed forms") {
    const auto zeros = count_frequencies({Sequence(10, 0), Sequence(6, 0)}, 8);
    CHECK(zeros.f[0] == 1.0);
    for (std::size_t i = 1; i < 8; ++i) CHECK(zeros.f[i] == 0.0);
    CHECK(zeros.total == 16);
    CHECK_THROWS_AS(count_frequencies({}, 8), std::invalid_argument);
    CHECK_THROWS_AS(count_frequencies({Sequence{}}, 8), std::invalid_argument);
}

TEST_CASE("uniform indices give 1/K within three sigma") {
    const std::size_t k = 64, n = 1000000;
    CounterRng rng(4);
    std::vector<Sequence> corpus(1000);
    for (auto& s : corpus)
        for (std::size_t t = 0; t < n / corpus.size(); ++t) s.push_back(static_cast<std::int32_t>(rng.uniform_int(k)));
    const auto table = count_frequencies(corpus, k);
    const double p = 1.0 / k, sigma = std::sqrt(p * (1 - p) / n);
    double sum = 0;
    for (auto f : table.f) {
        CHECK(std::abs(f - p) < 3 * sigma);
        sum += f;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("frequency records round trip exactly") {
    const auto c = tiny();
    const auto table = count_frequencies(skewed_corpus(50, c, 6), 16);
    const auto back = frequency_from_records(frequency_records(table));
    CHECK(back.counts == table.counts);
    CHECK(back.f == table.f);
    CHECK(back.total == table.total);
}

TEST_CASE("suppression closed forms") {
    const SuppressionConfig cfg{0.05, 40.0};
    CHECK(suppression(0.05, cfg) == 1.0);
    CHECK(suppression(0.01, cfg) == 1.0);
    CHECK(suppression(0.0, cfg) == 1.0);
    CHECK(std::abs(suppression(0.05 + 1.0 / 40.0, cfg) - std::exp(-1.0)) <= 1e-9);
    CHECK(std::abs(suppression(0.05 + 1.0 / 40.0, cfg) - 0.3679) < 1e-4);
    CHECK_THROWS(validate(SuppressionConfig{0.0, 1.0}));
    CHECK_THROWS(validate(SuppressionConfig{1.0, 1.0}));
    CHECK_THROWS(validate(SuppressionConfig{0.5, 0.0}));
}

TEST_CASE("suppression is continuous, monotone and in (0, 1]") {
    CounterRng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const SuppressionConfig cfg{0.01 + 0.5 * rng.uniform(), 0.5 + 50 * rng.uniform()};
        double prev = 2.0;
        for (int i = 0; i <= 1000; ++i) {
            const double s = suppression(i / 1000.0, cfg);
            CHECK(s > 0);
            CHECK(s <= 1.0);
            CHECK(s <= prev);
            prev = s;
        }
        CHECK(std::abs(suppression(cfg.tau - 1e-12, cfg) - suppression(cfg.tau, cfg)) < 1e-9);
        CHECK(std::abs(suppression(cfg.tau + 1e-12, cfg) - suppression(cfg.tau, cfg)) < 1e-9);
    }
}

TEST_CASE("tau is the interpolated percentile of f") {
    std::vector<std::uint64_t> counts(10);
    std::iota(counts.begin(), counts.end(), 1);  // f = i / 55
    const auto cfg = suppression_from_percentile(table_from_counts(counts), 0.9);
    CHECK(std::abs(cfg.tau - 9.1 / 55.0) < 1e-12);
    CHECK(std::abs(cfg.k - 2.0 / cfg.tau) < 1e-12);
    CHECK_THROWS(suppression_from_percentile(table_from_counts({5, 0, 0, 0}), 0.5));
}

TEST_CASE("step distribution is normalized and honours zero coefficients") {
    CounterRng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> logits(16), coef(16);
        for (auto& v : logits) v = 5 * rng.normal();
        for (auto& v : coef) v = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
        coef[trial % 16] = 1.0;
        const auto p = step_distribution(logits, {0.1 + 2 * rng.uniform(), coef});
        CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-6);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(p[i] >= 0);
            if (coef[i] == 0) CHECK(p[i] == 0);
        }
    }
    CHECK_THROWS(step_distribution({1, 2}, {0.0, {}}));
    CHECK_THROWS(step_distribution({1, 2}, {-1.0, {}}));
    CHECK_THROWS(step_distribution({1, 2}, {1.0, {0.0, 0.0}}));
}

TEST_CASE("sampling is deterministic in the code") {
    const auto c = tiny();
    ARModel m(c);
    const auto a = sample(m, 12345, {});
    CHECK(a == sample(m, 12345, {}));
    CHECK(a.size() == 8);
    for (auto i : a) CHECK((i >= 0 && i < 16));
    int differ = 0;
    for (std::uint64_t code = 0; code < 20; ++code) differ += sample(m, code, {}) != sample(m, code + 1000, {});
    CHECK(differ >= 18);
    CHECK_THROWS(sample(m, 1, {0.0, {}}));
}

TEST_CASE("low temperature gives greedy continuation") {
    const auto c = tiny();
    ARModel m(c);
    for (std::uint64_t code = 0; code < 10; ++code) {
        const auto s = sample(m, code, {1e-6, {}});
        Sequence greedy{s[0]};
        while (greedy.size() < m.length()) {
            const auto l = m.next_logits(greedy);
            greedy.push_back(static_cast<std::int32_t>(std::max_element(l.begin(), l.end()) - l.begin()));
        }
        CHECK(s == greedy);
    }
}

TEST_CASE("zero coefficients exclude indices after the first position") {
    const auto c = tiny();
    ARModel m(c);
    std::vector<double> coef(16, 1.0);
    const std::set<std::int32_t> banned{0, 3, 4, 9, 15};
    for (auto i : banned) coef[static_cast<std::size_t>(i)] = 0.0;
    for (std::uint64_t code = 0; code < 100; ++code) {
        const auto s = sample(m, code, {1.0, coef});
        for (std::size_t t = 1; t < s.size(); ++t) CHECK(banned.count(s[t]) == 0);
    }
}

TEST_CASE("suppression lowers the top-decile mass") {
    auto c = tiny();
    c.codewords = 40;
    ARModel m(c);
    const auto corpus = skewed_corpus(512, c, 31);
    ARTrainer tr(m, corpus);
    CounterRng rng(32);
    for (int i = 0; i < 300; ++i) tr.step(rng);
    const auto table = count_frequencies(corpus, 40);
    const auto top = top_indices(table, 4);
    const std::set<std::int32_t> decile(top.begin(), top.end());
    const SampleOptions plain{}, suppressed{1.0, suppression_coefficients(table, suppression_from_percentile(table))};
    double mass[2] = {0, 0};
    for (std::uint64_t code = 0; code < 200; ++code) {
        const auto a = sample(m, code, plain), b = sample(m, code, suppressed);
        for (std::size_t t = 1; t < a.size(); ++t) {
            mass[0] += decile.count(a[t]);
            mass[1] += decile.count(b[t]);
        }
    }
    CHECK(mass[1] < mass[0]);
}

TEST_CASE("high-frequency-only sampling stays in the top set") {
    const auto table = table_from_counts({5, 50, 20, 1, 50, 0, 7, 3});
    CHECK(top_indices(table, 3) == std::vector<std::int32_t>{1, 4, 2});
    CHECK(sample_high_frequency_only(table, 1, 10, 77) == Sequence(10, 1));
    const std::set<std::int32_t> allowed{1, 4, 2};
    for (std::uint64_t code = 0; code < 50; ++code)
        for (auto i : sample_high_frequency_only(table, 3, 16, code)) CHECK(allowed.count(i) == 1);
    CHECK(sample_high_frequency_only(table, 3, 16, 5) == sample_high_frequency_only(table, 3, 16, 5));
    CHECK_THROWS(sample_high_frequency_only(table, 9, 16, 1));
    CHECK_THROWS(sample_high_frequency_only(table, 0, 16, 1));
}

TEST_CASE("model records round trip bit-exactly") {
    const auto c = tiny();
    ARModel a(c);
    ARTrainer tr(a, skewed_corpus(32, c, 2));
    CounterRng rng(3);
    for (int i = 0; i < 5; ++i) tr.step(rng);
    auto cfg = c;
    cfg.seed = 999;
    ARModel b(cfg);
    b.load(a.records());
    CHECK(sample(a, 42, {}) == sample(b, 42, {}));
    const auto ra = a.records(), rb = b.records();
    REQUIRE(ra.size() == rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(ra[i].name == rb[i].name);
        CHECK(std::memcmp(ra[i].data.data(), rb[i].data.data(), ra[i].data.size() * sizeof(float)) == 0);
    }
}
