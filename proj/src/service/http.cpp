#include "service/http.hpp"

#include <array>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace stylecode::service {

using nlohmann::json;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

struct RequestError {
    int status;
    std::string reason;
    std::string message;
};

HttpResponse ok(const json& j) { return {200, j.dump()}; }

HttpResponse error_response(const RequestError& e) {
    return {e.status, json{{"error", e.reason}, {"message", e.message}}.dump()};
}

json parse_body(const std::string& body) {
    try {
        auto j = json::parse(body);
        if (!j.is_object()) throw RequestError{400, "malformed_body", "request body must be a JSON object"};
        return j;
    } catch (const json::parse_error& e) {
        throw RequestError{400, "malformed_body", std::string("request body is not valid JSON: ") + e.what()};
    }
}

std::uint64_t parse_code(const json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        std::size_t used = 0;
        try {
            if (!s.empty() && s[0] != '-') {
                const auto code = std::stoull(s, &used, 10);
                if (used == s.size()) return code;
            }
        } catch (const std::exception&) {
        }
    }
    throw RequestError{422, "invalid_code", field + " must be an unsigned 64-bit integer (number or decimal string)"};
}

int int_field(const json& j, const std::string& field, int fallback, int lo, int hi) {
    if (!j.contains(field)) return fallback;
    const auto& v = j.at(field);
    if (!v.is_number_integer() || v.get<long long>() < lo || v.get<long long>() > hi)
        throw RequestError{422, "invalid_" + field,
                           field + " must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]"};
    return v.get<int>();
}

std::vector<std::int32_t> caption_field(const json& j) {
    if (!j.contains("caption")) return world::parse_caption("one circle center");
    if (!j.at("caption").is_string()) throw RequestError{422, "invalid_caption", "caption must be a string"};
    try {
        return world::parse_caption(j.at("caption").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw RequestError{422, "invalid_caption", e.what()};
    }
}

Image decode_request_image(const std::vector<std::uint8_t>& bytes, int model_size) {
    Image img;
    try {
        img = decode_ppm(bytes);
    } catch (const std::invalid_argument& e) {
        throw RequestError{400, "malformed_image", e.what()};
    }
    if (img.width > kMaxRequestImageSide || img.height > kMaxRequestImageSide)
        throw RequestError{413, "image_too_large", "images are capped at 256x256"};
    if (img.width != model_size || img.height != model_size)
        throw RequestError{422, "image_size_mismatch",
                           "reference must be " + std::to_string(model_size) + "x" + std::to_string(model_size)};
    return img;
}

pipeline::StyleHandle style_field(const Bundle& bundle, const json& j, const std::string& field) {
    if (!j.contains(field) || !j.at(field).is_object())
        throw RequestError{422, "invalid_" + field, field + " must be an object with a code or an image"};
    const auto& s = j.at(field);
    const auto& models = bundle.models;
    if (s.contains("code") == s.contains("image"))
        throw RequestError{422, "invalid_" + field, field + " needs exactly one of code or image"};
    if (s.contains("code")) {
        pipeline::SamplingOptions opts{bundle.config.temperature, true};
        return pipeline::style_from_code(models, parse_code(s.at("code"), field + ".code"), opts);
    }
    if (!s.at("image").is_string()) throw RequestError{422, "invalid_" + field, field + ".image must be base64 PPM"};
    std::vector<std::uint8_t> bytes;
    try {
        bytes = base64_decode(s.at("image").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw RequestError{400, "malformed_image", e.what()};
    }
    return pipeline::style_from_image(models, decode_request_image(bytes, bundle.config.image_size));
}

template <typename F>
HttpResponse guarded(F&& f) {
    try {
        return f();
    } catch (const RequestError& e) {
        return error_response(e);
    } catch (const std::invalid_argument& e) {
        return error_response({422, "invalid_request", e.what()});
    } catch (const std::exception& e) {
        return error_response({500, "internal_error", e.what()});
    }
}

json image_list(const std::vector<Image>& images) {
    auto out = json::array();
    for (const auto& img : images) out.push_back(base64_encode(encode_ppm(img)));
    return out;
}

} // namespace

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        const std::uint32_t b0 = bytes[i];
        const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
        const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
        const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? kAlphabet[v & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw std::invalid_argument("base64 length must be a multiple of 4");
    std::array<int, 256> value{};
    value.fill(-1);
    for (int i = 0; i < 64; ++i) value[static_cast<unsigned char>(kAlphabet[i])] = i;
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        const bool last = i + 4 == text.size();
        int pad = 0;
        std::uint32_t v = 0;
        for (std::size_t k = 0; k < 4; ++k) {
            const char c = text[i + k];
            int d;
            if (c == '=' && last && k >= 2) {
                d = 0;
                ++pad;
            } else {
                d = value[static_cast<unsigned char>(c)];
                if (d < 0 || pad > 0) throw std::invalid_argument("invalid base64 character");
            }
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>(v >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

Service::Service(const Bundle& bundle) : bundle_(bundle) { bundle.require(kAllStages); }

HttpResponse Service::health() const {
    return ok({{"status", "ok"}, {"stages", stage_names(bundle_.stages)}});
}

HttpResponse Service::generate(const std::string& body) const {
    return guarded([&] {
        const auto j = parse_body(body);
        if (!j.contains("code")) throw RequestError{422, "missing_code", "code is required"};
        const auto code = parse_code(j.at("code"), "code");
        const auto caption = caption_field(j);
        const int count = int_field(j, "count", 4, 1, kMaxCount);
        pipeline::GenerationOptions opts;
        opts.steps = int_field(j, "steps", bundle_.config.sample_steps, 1, kMaxSteps);
        opts.sampling.temperature = bundle_.config.temperature;
        const auto out = pipeline::code_to_style_generate(bundle_.models, code, caption, count, opts);
        return ok({{"code", std::to_string(code)},
                   {"indices", out.indices},
                   {"width", bundle_.config.image_size},
                   {"height", bundle_.config.image_size},
                   {"images", image_list(out.images)}});
    });
}

HttpResponse Service::encode(const std::string& body) const {
    return guarded([&] {
        const std::vector<std::uint8_t> bytes(body.begin(), body.end());
        const auto img = decode_request_image(bytes, bundle_.config.image_size);
        return ok({{"indices", pipeline::style_from_image(bundle_.models, img).indices}});
    });
}

HttpResponse Service::interpolate(const std::string& body) const {
    return guarded([&] {
        const auto j = parse_body(body);
        const auto a = style_field(bundle_, j, "a");
        const auto b = style_field(bundle_, j, "b");
        if (!j.contains("weights") || !j.at("weights").is_array() || j.at("weights").empty() ||
            j.at("weights").size() > kMaxWeights)
            throw RequestError{422, "invalid_weights", "weights must be a non-empty array of at most 16 numbers"};
        std::vector<double> weights;
        for (const auto& w : j.at("weights")) {
            if (!w.is_number() || w.get<double>() < 0.0 || w.get<double>() > 1.0)
                throw RequestError{422, "invalid_weights", "every weight must be a number in [0, 1]"};
            weights.push_back(w.get<double>());
        }
        const auto caption = caption_field(j);
        const int steps = int_field(j, "steps", bundle_.config.sample_steps, 1, kMaxSteps);
        auto strategy = pipeline::MixStrategy::random;
        if (j.contains("strategy")) {
            if (!j.at("strategy").is_string()) throw RequestError{422, "invalid_strategy", "strategy must be a string"};
            try {
                strategy = pipeline::parse_strategy(j.at("strategy").get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw RequestError{422, "invalid_strategy", e.what()};
            }
        }
        const auto seed = j.contains("seed") ? parse_code(j.at("seed"), "seed") : std::uint64_t{0};
        const auto frames = pipeline::interpolate(bundle_.models, a, b, weights, caption, steps, strategy, seed);
        auto images = json::array(), indices = json::array();
        for (const auto& f : frames) {
            images.push_back(base64_encode(encode_ppm(f.image)));
            indices.push_back(f.indices);
        }
        return ok({{"weights", weights}, {"indices", indices}, {"images", images}});
    });
}

HttpResponse Service::frequencies() const {
    return guarded([&] {
        const auto& table = bundle_.models.require_frequencies();
        const auto s = generator::suppression_coefficients(table, bundle_.models.suppression);
        return ok({{"f", table.f},
                   {"s", s},
                   {"tau", bundle_.models.suppression.tau},
                   {"k", bundle_.models.suppression.k},
                   {"total", table.total}});
    });
}

// ---- server ---------------------------------------------------------------

struct HttpServer::Impl {
    const Service& service;
    httplib::Server server;
    std::thread thread;
};

HttpServer::HttpServer(const Service& service) : impl_(new Impl{service, {}, {}}) {
    auto& srv = impl_->server;
    const Service& svc = service;
    auto reply = [](httplib::Response& res, const HttpResponse& r) {
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    srv.set_payload_max_length(4u << 20);
    srv.Get("/health", [&svc, reply](const httplib::Request&, httplib::Response& res) { reply(res, svc.health()); });
    srv.Get("/frequencies",
            [&svc, reply](const httplib::Request&, httplib::Response& res) { reply(res, svc.frequencies()); });
    srv.Post("/generate", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.generate(req.body));
    });
    srv.Post("/encode",
             [&svc, reply](const httplib::Request& req, httplib::Response& res) { reply(res, svc.encode(req.body)); });
    srv.Post("/interpolate", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.interpolate(req.body));
    });
    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        const std::string reason = res.status == 404 ? "unknown_route" : "request_error";
        res.set_content(json{{"error", reason}, {"message", req.method + " " + req.path}}.dump(), "application/json");
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::start() {
    impl_->thread = std::thread([this] { listen(); });
    impl_->server.wait_until_ready();
}

void HttpServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace stylecode::service
