#include "stylecode/stylecode.h"

#include <cstring>
#include <memory>
#include <string>

#include "numerics/checkpoint.hpp"
#include "pipeline/pipeline.hpp"
#include "service/bundle.hpp"
#include "service/config.hpp"
#include "service/http.hpp"

using namespace stylecode;

struct sc_config {
    service::RunConfig value;
};

struct sc_dataset {
    world::Dataset value;
};

struct sc_bundle {
    service::Bundle value;
};

struct sc_style {
    pipeline::StyleHandle value;
};

struct sc_result {
    struct Item {
        generator::Sequence indices;
        std::vector<std::uint8_t> ppm;
        double weight = 0;
    };
    std::vector<Item> items;
};

struct sc_server {
    std::unique_ptr<service::Service> service;
    std::unique_ptr<service::HttpServer> server;
    int port = 0;
};

namespace {

thread_local std::string t_last_error;

sc_status fail(sc_status status, const std::string& message) {
    t_last_error = message;
    return status;
}

// Runs f, mapping exceptions to status codes and recording the message.
template <typename F>
sc_status guard(F&& f) {
    try {
        f();
        t_last_error.clear();
        return SC_OK;
    } catch (const service::IncompatibleCheckpoint& e) {
        return fail(SC_ERR_INCOMPATIBLE, e.what());
    } catch (const pipeline::MissingStage& e) {
        return fail(SC_ERR_MISSING_STAGE, e.what());
    } catch (const nn::FormatError& e) {
        return fail(SC_ERR_FORMAT, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(SC_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::out_of_range& e) {
        return fail(SC_ERR_INVALID_ARGUMENT, e.what());
    } catch (const std::ios_base::failure& e) {
        return fail(SC_ERR_IO, e.what());
    } catch (const std::exception& e) {
        const std::string what = e.what();
        if (what.rfind("cannot ", 0) == 0 || what.rfind("failed ", 0) == 0) return fail(SC_ERR_IO, what);
        return fail(SC_ERR_RUNTIME, what);
    } catch (...) {
        return fail(SC_ERR_RUNTIME, "unknown error");
    }
}

void need(const void* p, const char* what) {
    if (!p) throw std::invalid_argument(std::string(what) + " must not be null");
}

char* copy_string(const std::string& s) {
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::vector<std::int32_t> caption_tokens(const char* caption) {
    return world::parse_caption(caption ? caption : "");
}

Image image_from(const uint8_t* ppm, size_t length) {
    need(ppm, "image data");
    return decode_ppm(std::span<const std::uint8_t>(ppm, length));
}

const sc_result::Item& item_at(const sc_result* r, size_t i) {
    need(r, "result");
    if (i >= r->items.size()) throw std::out_of_range("result item out of range");
    return r->items[i];
}

service::Progress progress_adapter(sc_progress_fn fn, void* user) {
    if (!fn) return nullptr;
    return [fn, user](const std::string& stage, int step, int total, double loss) {
        fn(stage.c_str(), step, total, loss, user);
    };
}

} // namespace

extern "C" {

const char* sc_last_error(void) { return t_last_error.c_str(); }

const char* sc_status_name(sc_status status) {
    switch (status) {
    case SC_OK: return "ok";
    case SC_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case SC_ERR_IO: return "io_error";
    case SC_ERR_FORMAT: return "format_error";
    case SC_ERR_MISSING_STAGE: return "missing_stage";
    case SC_ERR_INCOMPATIBLE: return "incompatible_checkpoint";
    case SC_ERR_RUNTIME: return "runtime_error";
    }
    return "unknown_status";
}

void sc_free_string(char* text) { std::free(text); }

// ---- configuration ----

sc_status sc_config_default(sc_config** out) {
    return guard([&] {
        need(out, "out");
        *out = new sc_config{};
        service::validate((*out)->value);
    });
}

sc_status sc_config_load(const char* path, sc_config** out) {
    return guard([&] {
        need(out, "out");
        *out = new sc_config{service::resolve_config(path ? path : "")};
    });
}

sc_status sc_config_from_json(const char* text, sc_config** out) {
    return guard([&] {
        need(text, "text");
        need(out, "out");
        *out = new sc_config{service::config_from_json(text)};
    });
}

sc_status sc_config_apply_json(sc_config* config, const char* text) {
    return guard([&] {
        need(config, "config");
        need(text, "text");
        auto updated = config->value;
        service::apply_json(updated, text);
        config->value = updated;
    });
}

sc_status sc_config_save(const sc_config* config, const char* path) {
    return guard([&] {
        need(config, "config");
        need(path, "path");
        service::save_config(config->value, path);
    });
}

sc_status sc_config_to_json(const sc_config* config, char** out) {
    return guard([&] {
        need(config, "config");
        need(out, "out");
        *out = copy_string(service::to_json(config->value));
    });
}

sc_status sc_config_hash(const sc_config* config, uint64_t* out) {
    return guard([&] {
        need(config, "config");
        need(out, "out");
        *out = service::model_hash(config->value);
    });
}

void sc_config_free(sc_config* config) { delete config; }

// ---- dataset ----

sc_status sc_dataset_generate(const sc_config* config, const char* dir, sc_dataset** out) {
    return guard([&] {
        need(config, "config");
        need(dir, "dir");
        need(out, "out");
        *out = new sc_dataset{service::generate_dataset(config->value, dir)};
    });
}

sc_status sc_dataset_open(const sc_config* config, const char* dir, sc_dataset** out) {
    return guard([&] {
        need(config, "config");
        need(dir, "dir");
        need(out, "out");
        *out = new sc_dataset{service::open_dataset(config->value, dir)};
    });
}

sc_status sc_dataset_size(const sc_dataset* dataset, size_t* images, size_t* styles) {
    return guard([&] {
        need(dataset, "dataset");
        if (images) *images = dataset->value.images.size();
        if (styles) *styles = dataset->value.styles.size();
    });
}

void sc_dataset_free(sc_dataset* dataset) { delete dataset; }

// ---- bundle ----

sc_status sc_bundle_new(const sc_config* config, sc_bundle** out) {
    return guard([&] {
        need(config, "config");
        need(out, "out");
        *out = new sc_bundle{service::make_bundle(config->value)};
    });
}

sc_status sc_bundle_load(const char* path, const sc_config* config, sc_bundle** out) {
    return guard([&] {
        need(path, "path");
        need(out, "out");
        *out = new sc_bundle{config ? service::load_bundle(path, config->value) : service::load_bundle(path)};
    });
}

sc_status sc_bundle_save(const sc_bundle* bundle, const char* path) {
    return guard([&] {
        need(bundle, "bundle");
        need(path, "path");
        service::save_bundle(bundle->value, path);
    });
}

sc_status sc_bundle_stages(const sc_bundle* bundle, uint32_t* stages) {
    return guard([&] {
        need(bundle, "bundle");
        need(stages, "stages");
        *stages = bundle->value.stages;
    });
}

sc_status sc_bundle_config(const sc_bundle* bundle, sc_config** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        *out = new sc_config{bundle->value.config};
    });
}

void sc_bundle_free(sc_bundle* bundle) { delete bundle; }

sc_status sc_train_codebook(sc_bundle* bundle, const sc_dataset* dataset, int steps, sc_progress_fn progress,
                            void* user) {
    return guard([&] {
        need(bundle, "bundle");
        need(dataset, "dataset");
        const int n = steps < 0 ? bundle->value.config.codebook_steps : steps;
        service::train_codebook(bundle->value, dataset->value, n, progress_adapter(progress, user));
    });
}

sc_status sc_train_generator(sc_bundle* bundle, const sc_dataset* dataset, int steps, sc_progress_fn progress,
                             void* user) {
    return guard([&] {
        need(bundle, "bundle");
        need(dataset, "dataset");
        const int n = steps < 0 ? bundle->value.config.ar_steps : steps;
        service::train_generator(bundle->value, dataset->value, n, progress_adapter(progress, user));
    });
}

sc_status sc_compute_frequencies(sc_bundle* bundle, const sc_dataset* dataset) {
    return guard([&] {
        need(bundle, "bundle");
        need(dataset, "dataset");
        service::compute_frequencies(bundle->value, dataset->value);
    });
}

sc_status sc_train_flow(sc_bundle* bundle, const sc_dataset* dataset, int steps, sc_progress_fn progress,
                        void* user) {
    return guard([&] {
        need(bundle, "bundle");
        need(dataset, "dataset");
        const int n = steps < 0 ? bundle->value.config.flow_steps : steps;
        service::train_flow(bundle->value, dataset->value, n, progress_adapter(progress, user));
    });
}

// ---- results ----

size_t sc_result_count(const sc_result* result) { return result ? result->items.size() : 0; }

sc_status sc_result_indices(const sc_result* result, size_t item, const int32_t** data, size_t* length) {
    return guard([&] {
        need(data, "data");
        need(length, "length");
        const auto& it = item_at(result, item);
        *data = it.indices.data();
        *length = it.indices.size();
    });
}

sc_status sc_result_image(const sc_result* result, size_t item, const uint8_t** ppm, size_t* length) {
    return guard([&] {
        need(ppm, "ppm");
        need(length, "length");
        const auto& it = item_at(result, item);
        *ppm = it.ppm.data();
        *length = it.ppm.size();
    });
}

sc_status sc_result_weight(const sc_result* result, size_t item, double* weight) {
    return guard([&] {
        need(weight, "weight");
        *weight = item_at(result, item).weight;
    });
}

void sc_result_free(sc_result* result) { delete result; }

// ---- inference ----

sc_status sc_sample(const sc_bundle* bundle, uint64_t code, int suppress, sc_result** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        const auto& b = bundle->value;
        auto r = std::make_unique<sc_result>();
        r->items.push_back({pipeline::sample_indices(b.models, code, {b.config.temperature, suppress != 0}), {}, 0});
        *out = r.release();
    });
}

sc_status sc_generate(const sc_bundle* bundle, uint64_t code, const char* caption, int count, int steps,
                      int suppress, sc_result** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        const auto& b = bundle->value;
        pipeline::GenerationOptions opts;
        opts.steps = steps > 0 ? steps : b.config.sample_steps;
        opts.sampling = {b.config.temperature, suppress != 0};
        const auto gen = pipeline::code_to_style_generate(b.models, code, caption_tokens(caption), count, opts);
        auto r = std::make_unique<sc_result>();
        for (const auto& img : gen.images) r->items.push_back({gen.indices, encode_ppm(img), 0});
        *out = r.release();
    });
}

sc_status sc_encode(const sc_bundle* bundle, const uint8_t* ppm, size_t length, sc_result** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        auto r = std::make_unique<sc_result>();
        r->items.push_back({pipeline::style_from_image(bundle->value.models, image_from(ppm, length)).indices, {}, 0});
        *out = r.release();
    });
}

sc_status sc_generate_from_image(const sc_bundle* bundle, const uint8_t* ppm, size_t length, const char* caption,
                                 int steps, uint64_t noise_seed, sc_result** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        const auto& b = bundle->value;
        const auto ref = image_from(ppm, length);
        const auto style = pipeline::style_from_image(b.models, ref);
        const auto img = pipeline::image_conditioned_generate(b.models, ref, caption_tokens(caption),
                                                              steps > 0 ? steps : b.config.sample_steps, noise_seed);
        auto r = std::make_unique<sc_result>();
        r->items.push_back({style.indices, encode_ppm(img), 0});
        *out = r.release();
    });
}

sc_status sc_style_from_code(const sc_bundle* bundle, uint64_t code, sc_style** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        const auto& b = bundle->value;
        *out = new sc_style{pipeline::style_from_code(b.models, code, {b.config.temperature, true})};
    });
}

sc_status sc_style_from_image(const sc_bundle* bundle, const uint8_t* ppm, size_t length, sc_style** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        *out = new sc_style{pipeline::style_from_image(bundle->value.models, image_from(ppm, length))};
    });
}

void sc_style_free(sc_style* style) { delete style; }

sc_status sc_interpolate(const sc_bundle* bundle, const sc_style* a, const sc_style* b, const double* weights,
                         size_t n_weights, const char* caption, int steps, const char* strategy, uint64_t seed,
                         sc_result** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(a, "style a");
        need(b, "style b");
        need(out, "out");
        if (n_weights > 0) need(weights, "weights");
        const auto& bd = bundle->value;
        const auto frames = pipeline::interpolate(
            bd.models, a->value, b->value, std::vector<double>(weights, weights + n_weights), caption_tokens(caption),
            steps > 0 ? steps : bd.config.sample_steps, pipeline::parse_strategy(strategy ? strategy : "random"), seed);
        auto r = std::make_unique<sc_result>();
        for (const auto& f : frames) r->items.push_back({f.indices, encode_ppm(f.image), f.weight});
        *out = r.release();
    });
}

sc_status sc_frequencies(const sc_bundle* bundle, double* f, size_t capacity, size_t* length, double* tau,
                         double* k) {
    return guard([&] {
        need(bundle, "bundle");
        const auto& m = bundle->value.models;
        const auto& table = m.require_frequencies();
        if (length) *length = table.f.size();
        if (f) {
            if (capacity < table.f.size()) throw std::invalid_argument("frequency buffer is too small");
            std::copy(table.f.begin(), table.f.end(), f);
        }
        if (tau) *tau = m.suppression.tau;
        if (k) *k = m.suppression.k;
    });
}

sc_status sc_evaluate(const sc_bundle* bundle, const sc_dataset* dataset, size_t n_codes, int count, uint64_t seed,
                      int suppress, char** report_json) {
    return guard([&] {
        need(bundle, "bundle");
        need(report_json, "report_json");
        const auto& b = bundle->value;
        CounterRng rng(seed);
        std::vector<std::uint64_t> codes(n_codes);
        for (auto& c : codes) c = rng.next_u64();
        pipeline::GenerationOptions opts;
        opts.steps = b.config.sample_steps;
        opts.sampling = {b.config.temperature, suppress != 0};
        auto report = pipeline::evaluate(b.models, codes, count, opts);
        if (dataset) {
            const auto centroids = pipeline::style_centroids(b.models, dataset->value);
            const std::size_t draws = dataset->value.indices(world::Split::eval).size();
            report.recovery = pipeline::recovery_accuracy(b.models, dataset->value, centroids, draws, opts.steps, seed);
            report.recovery_draws = draws;
        }
        *report_json = copy_string(pipeline::report_to_json(report));
    });
}

// ---- HTTP service ----

sc_status sc_server_start(const sc_bundle* bundle, const char* host, int port, sc_server** out) {
    return guard([&] {
        need(bundle, "bundle");
        need(out, "out");
        auto s = std::make_unique<sc_server>();
        s->service = std::make_unique<service::Service>(bundle->value);
        s->server = std::make_unique<service::HttpServer>(*s->service);
        s->port = s->server->bind(host ? host : "127.0.0.1", port);
        s->server->start();
        *out = s.release();
    });
}

int sc_server_port(const sc_server* server) { return server ? server->port : -1; }

void sc_server_stop(sc_server* server) {
    if (server && server->server) server->server->stop();
}

void sc_server_free(sc_server* server) { delete server; }

} // extern "C"
