#include "service/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace stylecode::service {

using nlohmann::json;

#define CTYL_CONFIG_FIELDS(X)                                                                                     \
    X(styles) X(contents) X(image_size) X(data_seed) X(patch) X(feature_dim) X(extractor_seed) X(position_scale) \
    X(codewords) X(code_dim) X(margin) X(alpha) X(beta) X(commit) X(use_negatives) X(literal_recon)             \
    X(codebook_batch) X(codebook_lr) X(codebook_seed) X(codebook_steps) X(ar_width) X(ar_blocks) X(ar_heads)     \
    X(ar_batch) X(ar_lr) X(ar_seed) X(ar_steps) X(tau_percentile) X(suppression_k) X(temperature) X(flow_width)  \
    X(flow_blocks) X(flow_heads) X(flow_batch) X(flow_lr) X(flow_seed) X(flow_steps) X(sample_steps)             \
    X(data_dir) X(bundle)

namespace {

json to_object(const RunConfig& c) {
    json j;
#define X(name) j[#name] = c.name;
    CTYL_CONFIG_FIELDS(X)
#undef X
    return j;
}

void require(bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw std::invalid_argument("config " + key + ": " + what);
}

} // namespace

RunConfig reference_preset() {
    RunConfig c;
    c.codewords = 1024;
    c.code_dim = 64;
    c.codebook_steps = 20000;
    c.codebook_batch = 128;
    c.codebook_lr = 1e-5;
    c.flow_steps = 60000;
    c.flow_batch = 64;
    c.flow_lr = 4e-6;
    c.ar_steps = 100000;
    c.ar_batch = 64;
    c.ar_lr = 1e-5;
    // the renderer tops out at 64 px; 4 px patches give 256 tokens
    c.image_size = 64;
    c.patch = 4;
    return c;
}

void validate(const RunConfig& c) {
    require(c.styles >= 2, "styles", "at least 2 styles are needed for negative pairs");
    require(c.contents >= 2, "contents", "at least 2 contents per style are needed for positive pairs");
    require(world::valid_size(c.image_size), "image_size", "must be 32, 48 or 64");
    require(c.patch >= 1 && c.image_size % c.patch == 0, "patch", "must divide image_size");
    require(c.feature_dim >= 1, "feature_dim", "must be positive");
    require(c.position_scale >= 0, "position_scale", "must be non-negative");
    require(c.codewords >= 2, "codewords", "must be at least 2");
    require(c.code_dim >= 1, "code_dim", "must be positive");
    require(c.margin >= -1 && c.margin <= 1, "margin", "must lie in [-1, 1]");
    require(c.alpha >= 0, "alpha", "must be non-negative");
    require(c.beta >= 0, "beta", "must be non-negative");
    require(c.commit >= 0, "commit", "must be non-negative");
    require(c.codebook_batch >= 2, "codebook_batch", "must be at least 2");
    require(c.codebook_lr > 0, "codebook_lr", "must be positive");
    require(c.codebook_steps >= 0, "codebook_steps", "must be non-negative");
    require(c.ar_width >= 2 && c.ar_heads >= 1 && c.ar_width % c.ar_heads == 0, "ar_heads", "must divide ar_width");
    require(c.ar_blocks >= 1, "ar_blocks", "must be positive");
    require(c.ar_batch >= 1, "ar_batch", "must be positive");
    require(c.ar_lr > 0, "ar_lr", "must be positive");
    require(c.ar_steps >= 0, "ar_steps", "must be non-negative");
    require(c.tau_percentile > 0 && c.tau_percentile < 1, "tau_percentile", "must lie in (0, 1)");
    require(c.suppression_k >= 0, "suppression_k", "must be non-negative (0 selects 2 / tau)");
    require(c.temperature > 0, "temperature", "must be positive");
    require(c.flow_width >= 2 && c.flow_width % 2 == 0, "flow_width", "must be even");
    require(c.flow_heads >= 1 && c.flow_width % c.flow_heads == 0, "flow_heads", "must divide flow_width");
    require(c.flow_blocks >= 1, "flow_blocks", "must be positive");
    require(c.flow_batch >= 1, "flow_batch", "must be positive");
    require(c.flow_lr > 0, "flow_lr", "must be positive");
    require(c.flow_steps >= 0, "flow_steps", "must be non-negative");
    require(c.sample_steps >= 1, "sample_steps", "must be at least 1");
}

std::string to_json(const RunConfig& config) { return to_object(config).dump(2) + "\n"; }

void apply_json(RunConfig& config, const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config must be a flat JSON object");
    const auto known = to_object(RunConfig{});
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw std::invalid_argument("config has unknown key: " + key);
        if (value.is_object() || value.is_array()) throw std::invalid_argument("config " + key + ": must be a scalar");
    }
    try {
#define X(name) \
    if (j.contains(#name)) j.at(#name).get_to(config.name);
        CTYL_CONFIG_FIELDS(X)
#undef X
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config has a value of the wrong type: ") + e.what());
    }
    validate(config);
}

RunConfig config_from_json(const std::string& text) {
    RunConfig c;
    apply_json(c, text);
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const RunConfig& config, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write config: " + path);
    out << to_json(config);
    if (!out) throw std::runtime_error("failed writing config: " + path);
}

RunConfig resolve_config(const std::string& path) {
    if (!path.empty()) return load_config(path);
    if (const char* env = std::getenv("CTYL_CONFIG"); env && *env) return load_config(env);
    RunConfig c;
    validate(c);
    return c;
}

std::uint64_t model_hash(const RunConfig& c) {
    const json j{{"image_size", c.image_size}, {"patch", c.patch},         {"feature_dim", c.feature_dim},
                 {"extractor_seed", c.extractor_seed}, {"position_scale", c.position_scale},
                 {"codewords", c.codewords},   {"code_dim", c.code_dim},   {"ar_width", c.ar_width},
                 {"ar_blocks", c.ar_blocks},   {"ar_heads", c.ar_heads},   {"flow_width", c.flow_width},
                 {"flow_blocks", c.flow_blocks}, {"flow_heads", c.flow_heads}};
    // FNV-1a over the canonical (sorted-key) dump
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

world::DatasetConfig dataset_config(const RunConfig& c) { return {c.styles, c.contents, c.image_size, c.data_seed}; }

ExtractorConfig extractor_config(const RunConfig& c) {
    return {c.image_size, c.patch, c.feature_dim, c.extractor_seed, c.position_scale};
}

codebook::CodebookConfig codebook_config(const RunConfig& c) {
    codebook::CodebookConfig o;
    o.codewords = c.codewords;
    o.code_dim = c.code_dim;
    o.feature_dim = c.feature_dim;
    o.margin = c.margin;
    o.alpha = c.alpha;
    o.beta = c.beta;
    o.commit = c.commit;
    o.use_negatives = c.use_negatives;
    o.literal_recon = c.literal_recon;
    o.batch = c.codebook_batch;
    o.learning_rate = c.codebook_lr;
    o.seed = c.codebook_seed;
    return o;
}

generator::ARConfig ar_config(const RunConfig& c) {
    generator::ARConfig o;
    o.codewords = c.codewords;
    o.length = c.style_tokens();
    o.width = c.ar_width;
    o.blocks = c.ar_blocks;
    o.heads = c.ar_heads;
    o.batch = c.ar_batch;
    o.learning_rate = c.ar_lr;
    o.seed = c.ar_seed;
    return o;
}

flow::FlowConfig flow_config(const RunConfig& c) {
    flow::FlowConfig o;
    o.image_size = c.image_size;
    o.patch = c.patch;
    o.width = c.flow_width;
    o.blocks = c.flow_blocks;
    o.heads = c.flow_heads;
    o.feature_dim = c.feature_dim;
    o.style_tokens = c.style_tokens();
    o.batch = c.flow_batch;
    o.learning_rate = c.flow_lr;
    o.sample_steps = c.sample_steps;
    o.seed = c.flow_seed;
    return o;
}

} // namespace stylecode::service
