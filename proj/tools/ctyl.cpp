// Command-line entry point for every stage, built on the C API.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "stylecode/stylecode.h"

namespace {

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(sc_status status) {
    if (status != SC_OK) throw CliError(std::string(sc_status_name(status)) + ": " + sc_last_error());
}

template <typename T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    ~Handle() { Free(p); }
    T** out() { return &p; }
    T* get() const { return p; }
};

using Config = Handle<sc_config, sc_config_free>;
using Dataset = Handle<sc_dataset, sc_dataset_free>;
using Bundle = Handle<sc_bundle, sc_bundle_free>;
using Result = Handle<sc_result, sc_result_free>;
using Style = Handle<sc_style, sc_style_free>;

struct Options {
    std::string config_path;
    std::string data;
    std::string checkpoint;
    std::string out;
    std::string out_dir = ".";
    int steps = -1;
    std::uint64_t code = 0;
    int count = 1;
    std::string caption = "one circle center";
    bool no_suppression = false;
    std::uint64_t code_a = 0, code_b = 0;
    std::string image_a, image_b, image;
    std::string weights = "0,0.25,0.5,0.75,1";
    std::string strategy = "random";
    std::uint64_t seed = 0;
    std::size_t codes = 100;
    int eval_count = 4;
    std::string host = "127.0.0.1";
    int port = 8080;
};

bool explicit_config(const Options& o) {
    const char* env = std::getenv("CTYL_CONFIG");
    return !o.config_path.empty() || (env && *env);
}

void load_config(const Options& o, Config& config) { check(sc_config_load(o.config_path.c_str(), config.out())); }

std::string config_string(const Config& config, const std::string& key) {
    char* text = nullptr;
    check(sc_config_to_json(config.get(), &text));
    const std::string json(text);
    sc_free_string(text);
    // the dump is flat and pretty-printed: "key": "value"
    const auto at = json.find("\"" + key + "\": \"");
    if (at == std::string::npos) return {};
    const auto start = at + key.size() + 5;
    return json.substr(start, json.find('"', start) - start);
}

std::string or_config(const std::string& value, const Config& config, const std::string& key) {
    return value.empty() ? config_string(config, key) : value;
}

// Loads a checkpoint; an explicit config (flag or CTYL_CONFIG) must be hash-compatible.
void load_bundle(const Options& o, const std::string& path, Bundle& bundle) {
    if (explicit_config(o)) {
        Config config;
        load_config(o, config);
        check(sc_bundle_load(path.c_str(), config.get(), bundle.out()));
    } else {
        check(sc_bundle_load(path.c_str(), nullptr, bundle.out()));
    }
}

std::string checkpoint_path(const Options& o) {
    if (!o.checkpoint.empty()) return o.checkpoint;
    Config config;
    load_config(o, config);
    return config_string(config, "bundle");
}

void progress(const char* stage, int step, int total, double loss, void*) {
    if (step == 1 || step % 250 == 0 || step == total)
        std::fprintf(stderr, "%s step %d/%d loss %.5f\n", stage, step, total, loss);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::uint8_t* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out) throw CliError("cannot write " + path);
}

std::string indices_text(const sc_result* r, std::size_t item) {
    const int32_t* data = nullptr;
    std::size_t n = 0;
    check(sc_result_indices(r, item, &data, &n));
    std::string out;
    for (std::size_t i = 0; i < n; ++i) out += (i ? " " : "") + std::to_string(data[i]);
    return out;
}

void write_images(const sc_result* r, const std::string& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < sc_result_count(r); ++i) {
        const std::uint8_t* ppm = nullptr;
        std::size_t n = 0;
        check(sc_result_image(r, i, &ppm, &n));
        const auto path = (std::filesystem::path(dir) / (stem + "_" + std::to_string(i) + ".ppm")).string();
        write_file(path, ppm, n);
        std::cout << path << "\n";
    }
}

std::vector<double> parse_weights(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw CliError("invalid weight: " + item);
        }
    }
    return out;
}

// Loads the training inputs shared by the stage commands.
void stage_inputs(const Options& o, Config& config, Dataset& dataset, Bundle& bundle, bool fresh) {
    load_config(o, config);
    check(sc_dataset_open(config.get(), or_config(o.data, config, "data_dir").c_str(), dataset.out()));
    if (fresh) {
        check(sc_bundle_new(config.get(), bundle.out()));
    } else {
        if (o.checkpoint.empty()) throw CliError("--codebook is required");
        check(sc_bundle_load(o.checkpoint.c_str(), config.get(), bundle.out()));
    }
}

void save(const Options& o, const Config& config, const Bundle& bundle) {
    const auto path = or_config(o.out, config, "bundle");
    check(sc_bundle_save(bundle.get(), path.c_str()));
    std::cout << path << "\n";
}

std::atomic<bool> g_stop{false};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Code-to-style image generation at desk scale"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config_path, "Flat JSON config (falls back to $CTYL_CONFIG)");

    auto* gen_data = app.add_subcommand("gen-data", "Render the synthetic style dataset");
    gen_data->add_option("--out", o.out, "Dataset directory (default: data_dir)");

    auto* train_cb = app.add_subcommand("train-codebook", "Train the style codebook");
    train_cb->add_option("--data", o.data, "Dataset directory");
    train_cb->add_option("--steps", o.steps, "Training steps (default: config)");
    train_cb->add_option("--out", o.out, "Output checkpoint (default: bundle)");

    auto* train_ar = app.add_subcommand("train-ar", "Train the autoregressive style generator");
    auto* freq = app.add_subcommand("freq", "Count index frequencies and set suppression");
    auto* train_flow = app.add_subcommand("train-flow", "Train the flow renderer");
    for (auto* sub : {train_ar, freq, train_flow}) {
        sub->add_option("--codebook", o.checkpoint, "Input checkpoint with a trained codebook")->required();
        sub->add_option("--data", o.data, "Dataset directory");
        sub->add_option("--out", o.out, "Output checkpoint (default: bundle)");
    }
    train_ar->add_option("--steps", o.steps, "Training steps (default: config)");
    train_flow->add_option("--steps", o.steps, "Training steps (default: config)");

    auto* sample = app.add_subcommand("sample", "Print style indices for codes code .. code+count-1");
    auto* generate = app.add_subcommand("generate", "Generate images from a style code");
    auto* interpolate = app.add_subcommand("interpolate", "Blend two styles by index mixing");
    auto* encode = app.add_subcommand("encode", "Encode a PPM image into style indices");
    auto* eval = app.add_subcommand("eval", "Consistency, diversity and recovery report");
    auto* serve = app.add_subcommand("serve", "HTTP inference service");
    for (auto* sub : {sample, generate, interpolate, encode, eval, serve})
        sub->add_option("--checkpoint", o.checkpoint, "Checkpoint bundle (default: bundle)");
    for (auto* sub : {sample, generate, eval})
        sub->add_flag("--no-suppression", o.no_suppression, "Sample without frequency suppression");

    sample->add_option("--code", o.code, "Style code")->required();
    sample->add_option("--count", o.count, "Number of consecutive codes")->check(CLI::Range(1, 1000000));

    generate->add_option("--code", o.code, "Style code")->required();
    generate->add_option("--caption", o.caption, "Scene caption");
    generate->add_option("--count", o.count, "Images to generate")->check(CLI::Range(1, 256));
    generate->add_option("--steps", o.steps, "Euler steps (default: config)");
    generate->add_option("--out-dir", o.out_dir, "Output directory");

    interpolate->add_option("--code-a", o.code_a, "Style code A");
    interpolate->add_option("--code-b", o.code_b, "Style code B");
    interpolate->add_option("--image-a", o.image_a, "Reference PPM for style A (instead of --code-a)");
    interpolate->add_option("--image-b", o.image_b, "Reference PPM for style B (instead of --code-b)");
    interpolate->add_option("--weights", o.weights, "Comma-separated weights in [0, 1]");
    interpolate->add_option("--caption", o.caption, "Scene caption");
    interpolate->add_option("--strategy", o.strategy, "random or split");
    interpolate->add_option("--seed", o.seed, "Noise and mixing seed");
    interpolate->add_option("--steps", o.steps, "Euler steps (default: config)");
    interpolate->add_option("--out-dir", o.out_dir, "Output directory");

    encode->add_option("--image", o.image, "PPM image")->required();

    eval->add_option("--data", o.data, "Dataset directory for style recovery (optional)");
    eval->add_option("--codes", o.codes, "Number of codes")->check(CLI::Range(2, 100000));
    eval->add_option("--count", o.eval_count, "Images per code")->check(CLI::Range(2, 64));
    eval->add_option("--seed", o.seed, "Seed for drawing the codes");
    eval->add_option("--out", o.out, "Report path")->required();

    serve->add_option("--host", o.host, "Bind address");
    serve->add_option("--port", o.port, "Port (0 picks a free one)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen_data->parsed()) {
            Config config;
            load_config(o, config);
            Dataset ds;
            const auto dir = or_config(o.out, config, "data_dir");
            check(sc_dataset_generate(config.get(), dir.c_str(), ds.out()));
            std::size_t images = 0, styles = 0;
            check(sc_dataset_size(ds.get(), &images, &styles));
            std::cout << dir << ": " << images << " images, " << styles << " styles\n";
        } else if (train_cb->parsed() || train_ar->parsed() || freq->parsed() || train_flow->parsed()) {
            Config config;
            Dataset ds;
            Bundle bundle;
            stage_inputs(o, config, ds, bundle, train_cb->parsed());
            if (train_cb->parsed()) check(sc_train_codebook(bundle.get(), ds.get(), o.steps, progress, nullptr));
            if (train_ar->parsed()) check(sc_train_generator(bundle.get(), ds.get(), o.steps, progress, nullptr));
            if (freq->parsed()) check(sc_compute_frequencies(bundle.get(), ds.get()));
            if (train_flow->parsed()) check(sc_train_flow(bundle.get(), ds.get(), o.steps, progress, nullptr));
            save(o, config, bundle);
        } else if (sample->parsed()) {
            Bundle bundle;
            load_bundle(o, checkpoint_path(o), bundle);
            for (int i = 0; i < o.count; ++i) {
                Result r;
                const std::uint64_t code = o.code + static_cast<std::uint64_t>(i);
                check(sc_sample(bundle.get(), code, o.no_suppression ? 0 : 1, r.out()));
                std::cout << code << ": " << indices_text(r.get(), 0) << "\n";
            }
        } else if (generate->parsed()) {
            Bundle bundle;
            load_bundle(o, checkpoint_path(o), bundle);
            Result r;
            check(sc_generate(bundle.get(), o.code, o.caption.c_str(), o.count, o.steps, o.no_suppression ? 0 : 1,
                              r.out()));
            std::cout << "indices: " << indices_text(r.get(), 0) << "\n";
            write_images(r.get(), o.out_dir, "code_" + std::to_string(o.code));
        } else if (interpolate->parsed()) {
            Bundle bundle;
            load_bundle(o, checkpoint_path(o), bundle);
            Style a, b;
            auto resolve = [&](const std::string& image, std::uint64_t code, Style& s) {
                if (image.empty()) {
                    check(sc_style_from_code(bundle.get(), code, s.out()));
                } else {
                    const auto bytes = read_file(image);
                    check(sc_style_from_image(bundle.get(), bytes.data(), bytes.size(), s.out()));
                }
            };
            resolve(o.image_a, o.code_a, a);
            resolve(o.image_b, o.code_b, b);
            const auto weights = parse_weights(o.weights);
            Result r;
            check(sc_interpolate(bundle.get(), a.get(), b.get(), weights.data(), weights.size(), o.caption.c_str(),
                                 o.steps, o.strategy.c_str(), o.seed, r.out()));
            for (std::size_t i = 0; i < sc_result_count(r.get()); ++i)
                std::cout << "w=" << weights[i] << ": " << indices_text(r.get(), i) << "\n";
            write_images(r.get(), o.out_dir, "interp");
        } else if (encode->parsed()) {
            Bundle bundle;
            load_bundle(o, checkpoint_path(o), bundle);
            const auto bytes = read_file(o.image);
            Result r;
            check(sc_encode(bundle.get(), bytes.data(), bytes.size(), r.out()));
            std::cout << indices_text(r.get(), 0) << "\n";
        } else if (eval->parsed()) {
            Bundle bundle;
            load_bundle(o, checkpoint_path(o), bundle);
            Dataset ds;
            if (!o.data.empty()) {
                sc_config* cfg = nullptr;
                check(sc_bundle_config(bundle.get(), &cfg));
                const sc_status st = sc_dataset_open(cfg, o.data.c_str(), ds.out());
                sc_config_free(cfg);
                check(st);
            }
            char* report = nullptr;
            check(sc_evaluate(bundle.get(), ds.get(), o.codes, o.eval_count, o.seed, o.no_suppression ? 0 : 1, &report));
            const std::string text(report);
            sc_free_string(report);
            write_file(o.out, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
            std::cout << o.out << "\n";
        } else if (serve->parsed()) {
            Bundle bundle;
            load_bundle(o, checkpoint_path(o), bundle);
            sc_server* server = nullptr;
            check(sc_server_start(bundle.get(), o.host.c_str(), o.port, &server));
            std::signal(SIGINT, [](int) { g_stop = true; });
            std::signal(SIGTERM, [](int) { g_stop = true; });
            std::cout << "listening on " << o.host << ":" << sc_server_port(server) << std::endl;
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            sc_server_stop(server);
            sc_server_free(server);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
