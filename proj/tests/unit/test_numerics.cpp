#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "numerics/adam.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/layers.hpp"
#include "numerics/ops.hpp"
#include "numerics/rng.hpp"
#include "op_cases.hpp"

using namespace stylecode;
using nn::Tensor;
using TF = Tensor<float>;
using TD = Tensor<double>;

TEST_CASE("philox matches the published known-answer vectors") {
    auto zero = CounterRng::philox({0, 0, 0, 0}, {0, 0});
    CHECK(zero == std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    auto ones = CounterRng::philox({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
    CHECK(ones == std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    auto pi = CounterRng::philox({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
    CHECK(pi == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("counter rng streams are reproducible and distinct") {
    CounterRng a(42), b(42), c(42, 1);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        CHECK(x == b.next_u64());
        CHECK(x != c.next_u64());
    }
    CounterRng u(7);
    double mean = 0;
    for (int i = 0; i < 20000; ++i) {
        const double v = u.uniform();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
        mean += v;
    }
    CHECK(mean / 20000 == doctest::Approx(0.5).epsilon(0.02));
    for (int i = 0; i < 1000; ++i) CHECK(u.uniform_int(7) < 7);
}

TEST_CASE("forward examples") {
    SUBCASE("identity matmul") {
        auto eye = TF::from_data({2, 2}, {1, 0, 0, 1});
        auto a = TF::from_data({2, 2}, {1.5f, -2, 3, 4.25f});
        auto out = nn::matmul(eye, a);
        CHECK(std::vector<float>(out.data().begin(), out.data().end()) ==
              std::vector<float>(a.data().begin(), a.data().end()));
    }
    SUBCASE("softmax of zeros is uniform") {
        auto out = nn::softmax(TD::from_data({3}, {0, 0, 0}));
        for (double v : out.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("self cosine is one") {
        CounterRng rng(3);
        for (int i = 0; i < 10; ++i) {
            auto v = gradcheck::random_tensor({7}, rng);
            CHECK(nn::cosine_similarity(v, v).item() == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("zero vector cosine is floored, not NaN") {
        auto z = TD::zeros({4});
        auto v = TD::from_data({4}, {1, 2, 3, 4});
        CHECK(nn::cosine_similarity(z, v).item() == 0.0);
    }
    SUBCASE("softmax large inputs stay finite") {
        auto out = nn::softmax(TF::from_data({3}, {1000.f, 1000.f, -1000.f}));
        CHECK(out.data()[0] == doctest::Approx(0.5));
        CHECK(out.data()[2] == 0.0f);
    }
}

TEST_CASE("softmax rows are positive and sum to one") {
    CounterRng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = gradcheck::random_tensor({4, 9}, rng, 5.0);
        auto y = nn::softmax(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < 9; ++j) {
                CHECK(y.data()[r * 9 + j] > 0.0);
                s += y.data()[r * 9 + j];
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("backward examples") {
    SUBCASE("sum gives ones") {
        auto x = TF::from_data({3}, {1, 2, 3}, true);
        nn::backward(nn::sum(x));
        CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{1, 1, 1});
    }
    SUBCASE("mse against zero is mean-reduced 2x") {
        auto x = TF::from_data({1}, {2}, true);
        nn::backward(nn::mse(x, TF::zeros({1})));
        CHECK(x.grad()[0] == doctest::Approx(4.0));
    }
    SUBCASE("fan-out accumulates") {
        auto x = TD::from_data({1}, {0.7}, true);
        nn::backward(nn::sum(nn::add(x, x)));
        CHECK(x.grad()[0] == 2.0);
    }
    SUBCASE("leaf grads accumulate across graphs") {
        auto x = TD::from_data({2}, {1, 1}, true);
        nn::backward(nn::sum(x));
        nn::backward(nn::sum(x));
        CHECK(x.grad()[1] == 2.0);
    }
}

TEST_CASE("backward errors") {
    auto x = TF::from_data({2}, {1, 2}, true);
    auto loss = nn::sum(x);
    nn::backward(loss);
    CHECK_THROWS_AS(nn::backward(loss), nn::GraphError);
    CHECK_THROWS_AS(nn::backward(loss.detach()), nn::GraphError);
    CHECK_THROWS_AS(nn::backward(nn::mul(x, x)), nn::ShapeError);
    {
        nn::NoGradGuard guard;
        CHECK_THROWS_AS(nn::backward(nn::sum(x)), nn::GraphError);
    }
}

TEST_CASE("op errors") {
    auto a = TF::zeros({2, 3});
    auto b = TF::zeros({2, 3});
    CHECK_THROWS_AS(nn::matmul(a, b), nn::ShapeError);
    CHECK_THROWS_AS(nn::add(a, TF::zeros({2})), nn::ShapeError);
    CHECK_THROWS_AS(nn::reshape(a, {4}), nn::ShapeError);
    CHECK_THROWS_AS(nn::slice(a, 1, 2, 2), nn::ShapeError);
    auto bad = TF::from_data({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    CHECK_THROWS_AS(nn::relu(bad), nn::NonFiniteError);
    auto inf = TF::from_data({1}, {std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(nn::scale(inf, 2.0), nn::NonFiniteError);
    const std::int32_t ids[] = {5};
    CHECK_THROWS_AS(nn::embedding_lookup(a, std::span<const std::int32_t>(ids)), std::out_of_range);
    CHECK_THROWS_AS(TF::from_data({3}, {1, 2}), nn::ShapeError);
}

TEST_CASE("analytic gradients match central differences for every op") {
    CounterRng rng(2024);
    for (const auto& c : gradcheck::op_gradient_cases()) {
        CAPTURE(c.name);
        double worst = 0;
        for (int trial = 0; trial < 20; ++trial) worst = std::max(worst, gradcheck::max_relative_error(c.fn, c.make_inputs(rng)));
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("straight-through passes the downstream gradient unchanged") {
    CounterRng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto continuous = gradcheck::random_tensor({3, 4}, rng);
        auto quantized = gradcheck::random_tensor({3, 4}, rng);
        auto weights = gradcheck::random_tensor({3, 4}, rng);
        weights.set_requires_grad(false);
        auto st = nn::straight_through(continuous, quantized);
        CHECK(std::equal(st.data().begin(), st.data().end(), quantized.data().begin()));
        nn::backward(nn::sum(nn::mul(nn::gelu(st), weights)));
        // same downstream scalar taken directly w.r.t. the quantized values
        nn::backward(nn::sum(nn::mul(nn::gelu(quantized), weights)));
        CHECK(!quantized.grad().empty());
        for (std::size_t i = 0; i < 12; ++i) CHECK(continuous.grad()[i] == quantized.grad()[i]);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters in place") {
        auto p = TF::from_data({2}, {0.5f, -1.0f}, true);
        nn::Adam<float> opt({{"p", p}}, {});
        nn::backward(nn::sum(nn::scale(p, 0.0)));
        opt.step();
        CHECK(p.data()[0] == 0.5f);
        CHECK(p.data()[1] == -1.0f);
    }
    SUBCASE("constant gradient moves against its sign") {
        auto p = TF::from_data({2}, {0.0f, 0.0f}, true);
        nn::Adam<float> opt({{"p", p}}, {.learning_rate = 1e-2});
        auto coeff = TF::from_data({2}, {3.0f, -0.5f});
        for (int i = 0; i < 50; ++i) {
            nn::backward(nn::sum(nn::mul(p, coeff)));
            opt.step();
        }
        CHECK(p.data()[0] < 0.0f);
        CHECK(p.data()[1] > 0.0f);
        CHECK(opt.steps() == 50);
    }
    SUBCASE("scalar quadratic converges") {
        auto p = TD::from_data({1}, {2.0}, true);
        nn::Adam<double> opt({{"p", p}}, {.learning_rate = 1e-2});
        auto target = TD::from_data({1}, {-0.75});
        int steps = 0;
        double loss = 1;
        for (; steps < 2000 && loss >= 1e-6; ++steps) {
            auto l = nn::mse(p, target);
            loss = l.item();
            nn::backward(l);
            opt.step();
        }
        CHECK(loss < 1e-6);
        CHECK(steps <= 2000);
    }
    SUBCASE("non-finite gradient names the parameter") {
        auto p = TF::from_data({1}, {1.0f}, true);
        nn::Adam<float> opt({{"encoder.weight", p}}, {});
        p.node()->grad = {std::numeric_limits<float>::infinity()};
        try {
            opt.step();
            FAIL("expected NonFiniteError");
        } catch (const nn::NonFiniteError& e) {
            CHECK(std::string(e.what()).find("encoder.weight") != std::string::npos);
        }
    }
}

TEST_CASE("training steps are bitwise deterministic") {
    auto run = [] {
        CounterRng init(5);
        nn::Linear<float> layer(6, 3, init);
        nn::ParamList<float> params;
        layer.collect("l", params);
        nn::Adam<float> opt(params, {.learning_rate = 1e-2});
        CounterRng data(9);
        auto x = nn::randn<float>({8, 6}, 1.0, data, false);
        auto y = nn::randn<float>({8, 3}, 1.0, data, false);
        for (int i = 0; i < 25; ++i) {
            nn::backward(nn::mse(nn::gelu(layer(x)), y));
            opt.step();
        }
        return std::vector<float>(layer.weight.data().begin(), layer.weight.data().end());
    };
    CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is bit exact") {
    std::vector<nn::TensorRecord> recs = {
        {"cb.codewords", {3, 2}, {1.0f, -0.0f, 3.25f, std::numeric_limits<float>::denorm_min(), 1e30f, -7.5f}},
        {"scalar", {1}, {0.1f}},
        {"empty", {0}, {}},
    };
    std::stringstream buf;
    nn::write_checkpoint(buf, recs);
    const std::string bytes = buf.str();
    CHECK(bytes.substr(0, 4) == "CTYL");
    CHECK(static_cast<unsigned char>(bytes[4]) == 1);
    CHECK(static_cast<unsigned char>(bytes[5]) == 0);
    // first record: name length 12 little-endian, then the name
    CHECK(static_cast<unsigned char>(bytes[6]) == 12);
    CHECK(bytes.substr(8, 12) == "cb.codewords");
    CHECK(static_cast<unsigned char>(bytes[20]) == 2);  // rank
    CHECK(static_cast<unsigned char>(bytes[21]) == 3);  // dim0 LE
    // 1.0f = 0x3f800000 little-endian
    CHECK(static_cast<unsigned char>(bytes[29]) == 0x00);
    CHECK(static_cast<unsigned char>(bytes[32]) == 0x3f);

    std::stringstream in(bytes);
    auto back = nn::read_checkpoint(in);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].name == recs[i].name);
        CHECK(back[i].shape == recs[i].shape);
        CHECK(std::memcmp(back[i].data.data(), recs[i].data.data(), recs[i].data.size() * 4) == 0);
    }
}

TEST_CASE("checkpoint rejects corrupt input") {
    std::stringstream bad("XXXX\x01\x00");
    CHECK_THROWS_AS(nn::read_checkpoint(bad), nn::FormatError);
    std::stringstream buf;
    nn::write_checkpoint(buf, {{"w", {4}, {1, 2, 3, 4}}});
    std::string truncated = buf.str().substr(0, buf.str().size() - 3);
    std::stringstream t(truncated);
    CHECK_THROWS_AS(nn::read_checkpoint(t), nn::FormatError);

    CounterRng rng(1);
    nn::Linear<float> layer(2, 2, rng);
    nn::ParamList<float> params;
    layer.collect("x", params);
    CHECK_THROWS_AS(nn::assign_records({{"x.weight", {3}, {1, 2, 3}}}, params), nn::FormatError);
}
