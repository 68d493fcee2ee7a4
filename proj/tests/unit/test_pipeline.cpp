#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "codebook/codebook.hpp"
#include "pipeline/pipeline.hpp"
#include "tiny_bundle.hpp"

using namespace stylecode;
using namespace stylecode::pipeline;

namespace {

const Models& models() { return testing_support::tiny_world("pipeline").bundle.models; }

generator::Sequence seq(std::size_t n, std::int32_t offset) {
    generator::Sequence s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<std::int32_t>(i) + offset;
    return s;
}

std::vector<float> random_vector(CounterRng& rng, std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

double cos_ref(const std::vector<float>& a, const std::vector<float>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * a[i];
        bb += double(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

} // namespace

TEST_CASE("mixing at the endpoints returns the inputs") {
    const auto a = seq(64, 0), b = seq(64, 1000);
    for (auto strategy : {MixStrategy::random, MixStrategy::split}) {
        CounterRng rng(1);
        CHECK(mix_indices(a, b, 0.0, strategy, rng) == a);
        CHECK(mix_indices(a, b, 1.0, strategy, rng) == b);
    }
}

TEST_CASE("random mixing takes b with probability w") {
    const auto a = seq(10000, 0), b = seq(10000, 100000);
    CounterRng rng(2);
    const auto m = mix_indices(a, b, 0.5, MixStrategy::random, rng);
    std::size_t from_b = 0;
    for (std::size_t p = 0; p < m.size(); ++p) {
        CHECK((m[p] == a[p] || m[p] == b[p]));
        from_b += m[p] == b[p];
    }
    CHECK(std::abs(static_cast<double>(from_b) / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("split mixing keeps a prefix of a") {
    const auto a = seq(16, 0), b = seq(16, 100);
    CounterRng rng(3);
    const auto m = mix_indices(a, b, 0.3, MixStrategy::split, rng);
    const std::size_t from_a = 11;  // floor(0.7 * 16)
    for (std::size_t p = 0; p < 16; ++p) CHECK(m[p] == (p < from_a ? a[p] : b[p]));
}

TEST_CASE("mixing rejects bad weights, lengths and strategies") {
    CounterRng rng(4);
    CHECK_THROWS_AS(mix_indices(seq(4, 0), seq(4, 9), 1.5, MixStrategy::random, rng), std::invalid_argument);
    CHECK_THROWS_AS(mix_indices(seq(4, 0), seq(4, 9), -0.1, MixStrategy::split, rng), std::invalid_argument);
    CHECK_THROWS_AS(mix_indices(seq(4, 0), seq(5, 9), 0.5, MixStrategy::random, rng), std::invalid_argument);
    CHECK(parse_strategy("split") == MixStrategy::split);
    CHECK_THROWS_AS(parse_strategy("blend"), std::invalid_argument);
}

TEST_CASE("with a shared mixing stream, b positions grow with the weight") {
    const auto a = seq(256, 0), b = seq(256, 1000);
    generator::Sequence prev = a;
    for (double w = 0.1; w <= 1.0; w += 0.1) {
        CounterRng rng(5);
        const auto m = mix_indices(a, b, w, MixStrategy::random, rng);
        for (std::size_t p = 0; p < m.size(); ++p)
            if (prev[p] == b[p]) CHECK(m[p] == b[p]);
        prev = m;
    }
}

TEST_CASE("consistency and diversity match a direct computation") {
    CounterRng rng(6);
    std::vector<std::vector<std::vector<float>>> groups(5);
    for (auto& g : groups)
        for (int i = 0; i < 4; ++i) g.push_back(random_vector(rng, 12));
    double cons = 0;
    for (const auto& g : groups) {
        double s = 0;
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j) s += cos_ref(g[i], g[j]);
        cons += s / 6 / 5;
    }
    double div = 0;
    for (int a = 0; a < 5; ++a)
        for (int b = a + 1; b < 5; ++b) div += cos_ref(groups[a][0], groups[b][0]) / 10;
    CHECK(std::abs(consistency(groups) - cons) <= 1e-9);
    CHECK(std::abs(diversity(groups) - (1.0 - div)) <= 1e-9);
}

TEST_CASE("identical images are fully consistent and orthogonal codes fully diverse") {
    const std::vector<float> v{1, 2, 3}, x{1, 0, 0}, y{0, 1, 0};
    CHECK(std::abs(consistency({{v, v, v}}) - 1.0) <= 1e-9);
    CHECK(std::abs(diversity({{x, x}, {y, y}}) - 1.0) <= 1e-9);
    CHECK_THROWS_AS(consistency({{v}}), std::invalid_argument);
    CHECK_THROWS_AS(diversity({{v, v}}), std::invalid_argument);
}

TEST_CASE("spearman uses average ranks") {
    CHECK(spearman({1, 2, 3, 4, 5}, {2, 1, 4, 3, 5}) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(spearman({1, 2, 3}, {30, 20, 10}) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(4.5 / std::sqrt(22.5)).epsilon(1e-12));
    CHECK(spearman({1, 1, 1}, {1, 2, 3}) == 0.0);
    CHECK_THROWS_AS(spearman({1}, {1}), std::invalid_argument);
}

TEST_CASE("missing stages are reported") {
    const Models empty;
    CHECK_THROWS_AS(sample_indices(empty, 1, {}), MissingStage);
    CHECK_THROWS_AS(empty.require_flow(), MissingStage);
    CHECK_THROWS_AS(empty.require_extractor(), MissingStage);
}

TEST_CASE("code-to-style generation is deterministic and batch-invariant") {
    const auto caption = eval_caption(7, 0, 32);
    const GenerationOptions opt{4, {}};
    const auto g1 = code_to_style_generate(models(), 7, caption, 3, opt);
    const auto g2 = code_to_style_generate(models(), 7, caption, 3, opt);
    REQUIRE(g1.images.size() == 3);
    CHECK(g1.indices == g2.indices);
    CHECK(g1.images == g2.images);
    CHECK(g1.indices == sample_indices(models(), 7, opt.sampling));
    const auto style = style_from_code(models(), 7, opt.sampling);
    const auto single = render(models(), {&style.embedding}, {caption}, {image_noise(models(), 7, 2)}, 4);
    CHECK(single[0] == g1.images[2]);
    CHECK(g1.images[0] != g1.images[1]);
}

TEST_CASE("suppression changes the sampled indices for some code") {
    bool differs = false;
    for (std::uint64_t code = 0; code < 20 && !differs; ++code)
        differs = sample_indices(models(), code, {1.0, true}) != sample_indices(models(), code, {1.0, false});
    CHECK(differs);
}

TEST_CASE("image styles encode the reference and reject other sizes") {
    const auto& ds = testing_support::tiny_world("pipeline").dataset;
    const auto s = style_from_image(models(), ds.images[0], "ref.ppm");
    CHECK(s.origin == Origin::image);
    CHECK(s.indices == models().require_codebook().encode(
                           normalize_tokens(models().require_extractor().extract(ds.images[0]))));
    CHECK_THROWS_AS(style_from_image(models(), Image(16, 16)), std::invalid_argument);
}

TEST_CASE("interpolation endpoints reproduce each style and share the noise") {
    const auto a = style_from_code(models(), 11, {}), b = style_from_code(models(), 12, {});
    const auto caption = eval_caption(0, 0, 32);
    for (auto strategy : {MixStrategy::random, MixStrategy::split}) {
        const auto frames = interpolate(models(), a, b, {0.0, 0.5, 1.0}, caption, 4, strategy, 9);
        REQUIRE(frames.size() == 3);
        CHECK(frames[0].indices == a.indices);
        CHECK(frames[2].indices == b.indices);
        const auto noise = image_noise(models(), 9, 0);
        CHECK(frames[0].image == render(models(), {&a.embedding}, {caption}, {noise}, 4)[0]);
        CHECK(frames[2].image == render(models(), {&b.embedding}, {caption}, {noise}, 4)[0]);
        CHECK(interpolate(models(), a, b, {0.5}, caption, 4, strategy, 9)[0].image == frames[1].image);
    }
    CHECK_THROWS_AS(interpolate(models(), a, b, {}, caption, 4, MixStrategy::random, 9), std::invalid_argument);
}

TEST_CASE("evaluation reports per-code consistency and serializes") {
    const auto report = evaluate(models(), {1, 2, 3}, 2, {4, {}});
    CHECK(report.details.size() == 3);
    CHECK(report.consistency >= -1.0);
    CHECK(report.consistency <= 1.0);
    double mean = 0;
    for (const auto& d : report.details) mean += d.consistency / 3;
    CHECK(std::abs(mean - report.consistency) <= 1e-12);
    const auto j = nlohmann::json::parse(report_to_json(report));
    CHECK(j.at("codes").get<int>() == 3);
    CHECK(j.at("diversity").get<double>() == doctest::Approx(report.diversity));
    CHECK_THROWS_AS(evaluate(models(), {1}, 2, {4, {}}), std::invalid_argument);
}

TEST_CASE("style recovery is a deterministic fraction") {
    const auto& ds = testing_support::tiny_world("pipeline").dataset;
    const auto centroids = style_centroids(models(), ds);
    CHECK(centroids.style_ids.size() == 6);
    const double r1 = recovery_accuracy(models(), ds, centroids, 6, 4, 3);
    CHECK(r1 >= 0.0);
    CHECK(r1 <= 1.0);
    CHECK(recovery_accuracy(models(), ds, centroids, 6, 4, 3) == r1);
}
