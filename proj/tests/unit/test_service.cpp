#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "service/http.hpp"
#include "tiny_bundle.hpp"

using namespace stylecode;
using namespace stylecode::service;
using nlohmann::json;

namespace {

const testing_support::TinyWorld& tw() { return testing_support::tiny_world("service"); }

std::string ppm_string(const Image& img) {
    const auto bytes = encode_ppm(img);
    return {bytes.begin(), bytes.end()};
}

bool same_records(const std::vector<nn::TensorRecord>& a, const std::vector<nn::TensorRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].shape != b[i].shape || a[i].data.size() != b[i].data.size()) return false;
        if (std::memcmp(a[i].data.data(), b[i].data.data(), a[i].data.size() * sizeof(float)) != 0) return false;
    }
    return true;
}

json body(const HttpResponse& r) { return json::parse(r.body); }

} // namespace

TEST_CASE("config round-trips through JSON and files") {
    auto c = tw().config;
    c.margin = 0.123456789;
    c.temperature = 0.7;
    CHECK(config_from_json(to_json(c)) == c);
    const auto path = testing_support::scratch_dir("config") + "/c.json";
    save_config(c, path);
    CHECK(load_config(path) == c);
    CHECK(config_from_json(to_json(reference_preset())) == reference_preset());
}

TEST_CASE("config overrides reject unknown keys, wrong types and invalid values") {
    RunConfig c;
    apply_json(c, R"({"codewords": 32, "use_negatives": false})");
    CHECK(c.codewords == 32);
    CHECK_FALSE(c.use_negatives);
    CHECK_THROWS_AS(apply_json(c, R"({"codewordz": 32})"), std::invalid_argument);
    CHECK_THROWS_AS(apply_json(c, R"({"codewords": "many"})"), std::invalid_argument);
    CHECK_THROWS_AS(apply_json(c, R"({"codewords": {"n": 1}})"), std::invalid_argument);
    CHECK_THROWS_AS(apply_json(c, R"({"codewords": 0})"), std::invalid_argument);
    CHECK_THROWS_AS(apply_json(c, R"({"image_size": 30})"), std::invalid_argument);
    CHECK_THROWS_AS(apply_json(c, "[1, 2]"), std::invalid_argument);
}

TEST_CASE("config resolution falls back to the environment, then defaults") {
    const auto path = testing_support::scratch_dir("env") + "/env.json";
    RunConfig c;
    c.styles = 7;
    save_config(c, path);
    ::unsetenv("CTYL_CONFIG");
    CHECK(resolve_config("") == RunConfig{});
    ::setenv("CTYL_CONFIG", path.c_str(), 1);
    CHECK(resolve_config("").styles == 7);
    RunConfig other;
    other.styles = 9;
    const auto explicit_path = testing_support::scratch_dir("env2") + "/x.json";
    save_config(other, explicit_path);
    CHECK(resolve_config(explicit_path).styles == 9);
    ::unsetenv("CTYL_CONFIG");
}

TEST_CASE("model hash tracks architecture but not training schedule") {
    RunConfig a, b;
    b.codebook_steps = 1;
    b.flow_lr = 0.5;
    b.data_dir = "elsewhere";
    CHECK(model_hash(a) == model_hash(b));
    b.codewords = 64;
    CHECK(model_hash(a) != model_hash(b));
}

TEST_CASE("bundles round-trip bit-exactly") {
    const auto& w = tw();
    const auto path = testing_support::scratch_dir("bundle") + "/b.ctyl";
    save_bundle(w.bundle, path);
    CHECK(std::filesystem::exists(path + ".json"));
    const auto loaded = load_bundle(path);
    CHECK(loaded.stages == kAllStages);
    CHECK(loaded.config == w.bundle.config);
    CHECK(same_records(bundle_records(loaded), bundle_records(w.bundle)));
    CHECK(loaded.models.suppression.tau == w.bundle.models.suppression.tau);
    CHECK(loaded.models.suppression.k == w.bundle.models.suppression.k);
    const pipeline::GenerationOptions opt{4, {}};
    const auto cap = pipeline::eval_caption(3, 0, 32);
    CHECK(pipeline::code_to_style_generate(loaded.models, 3, cap, 2, opt).images ==
          pipeline::code_to_style_generate(w.bundle.models, 3, cap, 2, opt).images);
}

TEST_CASE("loading with an incompatible config fails") {
    const auto path = testing_support::scratch_dir("incompatible") + "/b.ctyl";
    save_bundle(tw().bundle, path);
    auto other = tw().config;
    other.code_dim = 8;
    CHECK_THROWS_AS(load_bundle(path, other), IncompatibleCheckpoint);
    auto schedule = tw().config;
    schedule.flow_steps = 1;
    CHECK(load_bundle(path, schedule).stages == kAllStages);
    CHECK_THROWS(load_bundle(path + ".missing"));
}

TEST_CASE("partial bundles keep their stages and report missing ones") {
    const auto& w = tw();
    auto b = make_bundle(w.config);
    CHECK(b.stages == kStageExtractor);
    CHECK_THROWS_AS(b.require(kStageCodebook), pipeline::MissingStage);
    CHECK_THROWS_AS(train_generator(b, w.dataset, 1), pipeline::MissingStage);
    train_codebook(b, w.dataset, 2);
    CHECK(b.stages == (kStageExtractor | kStageCodebook));
    const auto path = testing_support::scratch_dir("partial") + "/p.ctyl";
    save_bundle(b, path);
    const auto loaded = load_bundle(path);
    CHECK(loaded.stages == b.stages);
    CHECK_FALSE(loaded.models.ar.has_value());
    CHECK_THROWS_AS(Service{loaded}, pipeline::MissingStage);
    // retraining an upstream stage clears the ones that depend on it
    auto full = w.bundle;
    train_codebook(full, w.dataset, 1);
    CHECK(full.stages == (kStageExtractor | kStageCodebook));
}

TEST_CASE("datasets are checked against the config") {
    auto c = tw().config;
    c.image_size = 64;
    CHECK_THROWS_AS(open_dataset(c, tw().config.data_dir), std::invalid_argument);
    CHECK(open_dataset(tw().config, tw().config.data_dir).images == tw().dataset.images);
}

TEST_CASE("base64 matches known vectors and round-trips") {
    const auto enc = [](const std::string& s) { return base64_encode({s.begin(), s.end()}); };
    CHECK(enc("") == "");
    CHECK(enc("f") == "Zg==");
    CHECK(enc("fo") == "Zm8=");
    CHECK(enc("foo") == "Zm9v");
    CHECK(enc("foobar") == "Zm9vYmFy");
    CounterRng rng(1);
    for (std::size_t n = 0; n < 40; ++n) {
        std::vector<std::uint8_t> bytes(n);
        for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.next_u64());
        CHECK(base64_decode(base64_encode(bytes)) == bytes);
    }
    CHECK_THROWS_AS(base64_decode("Zm9"), std::invalid_argument);
    CHECK_THROWS_AS(base64_decode("Zm!v"), std::invalid_argument);
    CHECK_THROWS_AS(base64_decode("Z=9v"), std::invalid_argument);
    CHECK_THROWS_AS(base64_decode("Zg==Zg=="), std::invalid_argument);
}

TEST_CASE("generate handler equals the direct pipeline") {
    const Service svc(tw().bundle);
    const auto r = svc.generate(R"({"code": "18446744073709551615", "caption": "two square left", "count": 2, "steps": 3})");
    REQUIRE(r.status == 200);
    const auto j = body(r);
    const auto direct = pipeline::code_to_style_generate(tw().bundle.models, 18446744073709551615ull,
                                                         world::parse_caption("two square left"), 2, {3, {}});
    CHECK(j.at("code") == "18446744073709551615");
    CHECK(j.at("indices").get<std::vector<std::int32_t>>() == direct.indices);
    REQUIRE(j.at("images").size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto bytes = base64_decode(j.at("images")[i].get<std::string>());
        CHECK(decode_ppm(bytes) == direct.images[i]);
    }
    const auto numeric = body(svc.generate(R"({"code": 42, "count": 1, "steps": 2})"));
    CHECK(numeric.at("code") == "42");
}

TEST_CASE("handlers reject bad requests with machine-readable reasons") {
    const Service svc(tw().bundle);
    const auto reason = [](const HttpResponse& r) { return body(r).at("error").get<std::string>(); };
    CHECK(svc.generate("not json").status == 400);
    CHECK(reason(svc.generate("not json")) == "malformed_body");
    CHECK(reason(svc.generate("[]")) == "malformed_body");
    CHECK(reason(svc.generate("{}")) == "missing_code");
    CHECK(reason(svc.generate(R"({"code": -1})")) == "invalid_code");
    CHECK(reason(svc.generate(R"({"code": "12x"})")) == "invalid_code");
    CHECK(reason(svc.generate(R"({"code": 1, "count": 0})")) == "invalid_count");
    CHECK(reason(svc.generate(R"({"code": 1, "count": 17})")) == "invalid_count");
    CHECK(reason(svc.generate(R"({"code": 1, "steps": 201})")) == "invalid_steps");
    CHECK(reason(svc.generate(R"({"code": 1, "caption": "purple dragon"})")) == "invalid_caption");
    CHECK(svc.generate(R"({"code": 1, "count": 0})").status == 422);

    CHECK(svc.encode("garbage").status == 400);
    CHECK(reason(svc.encode("garbage")) == "malformed_image");
    CHECK(svc.encode(ppm_string(Image(300, 8))).status == 413);
    CHECK(reason(svc.encode(ppm_string(Image(16, 16)))) == "image_size_mismatch");

    CHECK(reason(svc.interpolate(R"({"b": {"code": 1}, "weights": [0.5]})")) == "invalid_a");
    CHECK(reason(svc.interpolate(R"({"a": {"code": 1, "image": "AA=="}, "b": {"code": 2}, "weights": [0]})")) ==
          "invalid_a");
    CHECK(reason(svc.interpolate(R"({"a": {"code": 1}, "b": {"code": 2}, "weights": []})")) == "invalid_weights");
    CHECK(reason(svc.interpolate(R"({"a": {"code": 1}, "b": {"code": 2}, "weights": [1.5]})")) ==
          "invalid_weights");
    CHECK(reason(svc.interpolate(R"({"a": {"code": 1}, "b": {"code": 2}, "weights": [0.5], "strategy": "x"})")) ==
          "invalid_strategy");
    CHECK(reason(svc.interpolate(R"({"a": {"code": 1}, "b": {"image": "@@@@"}, "weights": [0.5]})")) ==
          "malformed_image");
}

TEST_CASE("encode and interpolate handlers match the pipeline") {
    const auto& w = tw();
    const Service svc(w.bundle);
    const auto enc = body(svc.encode(ppm_string(w.dataset.images[5])));
    CHECK(enc.at("indices").get<std::vector<std::int32_t>>() ==
          pipeline::style_from_image(w.bundle.models, w.dataset.images[5]).indices);

    const json req{{"a", {{"code", 4}}},
                   {"b", {{"image", base64_encode(encode_ppm(w.dataset.images[9]))}}},
                   {"weights", {0.0, 0.5, 1.0}},
                   {"caption", "one circle center"},
                   {"steps", 3},
                   {"seed", 5}};
    const auto r = svc.interpolate(req.dump());
    REQUIRE(r.status == 200);
    const auto j = body(r);
    const auto a = pipeline::style_from_code(w.bundle.models, 4, {});
    const auto b = pipeline::style_from_image(w.bundle.models, w.dataset.images[9]);
    const auto frames = pipeline::interpolate(w.bundle.models, a, b, {0.0, 0.5, 1.0},
                                              world::parse_caption("one circle center"), 3,
                                              pipeline::MixStrategy::random, 5);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(j.at("indices")[i].get<std::vector<std::int32_t>>() == frames[i].indices);
        CHECK(decode_ppm(base64_decode(j.at("images")[i].get<std::string>())) == frames[i].image);
    }
}

TEST_CASE("frequencies handler returns a distribution") {
    const auto j = body(Service(tw().bundle).frequencies());
    double sum = 0;
    for (double f : j.at("f")) sum += f;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    CHECK(j.at("f").size() == static_cast<std::size_t>(tw().config.codewords));
    CHECK(j.at("tau").get<double>() > 0);
    CHECK(j.at("k").get<double>() > 0);
    for (double s : j.at("s")) CHECK((s > 0.0 && s <= 1.0));
}

TEST_CASE("HTTP server serves every route and handles concurrent requests") {
    const Service svc(tw().bundle);
    HttpServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    server.start();
    httplib::Client client("127.0.0.1", port);

    auto health = client.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body).at("status") == "ok");

    auto freq = client.Get("/frequencies");
    REQUIRE(freq);
    CHECK(freq->status == 200);

    const std::string gen_body = R"({"code": 77, "count": 2, "steps": 3})";
    auto gen = client.Post("/generate", gen_body, "application/json");
    REQUIRE(gen);
    CHECK(gen->status == 200);
    CHECK(gen->body == svc.generate(gen_body).body);

    auto enc = client.Post("/encode", ppm_string(tw().dataset.images[0]), "image/x-portable-pixmap");
    REQUIRE(enc);
    CHECK(enc->status == 200);

    auto interp = client.Post("/interpolate", R"({"a": {"code": 1}, "b": {"code": 2}, "weights": [0.25], "steps": 2})",
                              "application/json");
    REQUIRE(interp);
    CHECK(interp->status == 200);

    auto bad = client.Post("/generate", "{", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body).at("error") == "malformed_body");

    auto missing = client.Get("/nowhere");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(json::parse(missing->body).at("error") == "unknown_route");

    std::vector<std::string> results(6);
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < results.size(); ++i)
        threads.emplace_back([&, i] {
            httplib::Client c("127.0.0.1", port);
            const auto code = std::to_string(100 + i % 3);
            if (auto r = c.Post("/generate", R"({"code": )" + code + R"(, "count": 1, "steps": 2})", "application/json"))
                results[i] = r->body;
        });
    for (auto& t : threads) t.join();
    for (std::size_t i = 0; i < results.size(); ++i) {
        REQUIRE_FALSE(results[i].empty());
        CHECK(results[i] == results[i % 3]);
    }
    server.stop();
}
