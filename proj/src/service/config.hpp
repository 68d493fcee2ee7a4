#pragma once

#include <cstdint>
#include <string>

#include "codebook/codebook.hpp"
#include "features/extractor.hpp"
#include "flow/flow.hpp"
#include "generator/ar_model.hpp"
#include "styleworld/styleworld.hpp"

namespace stylecode::service {

// One flat configuration shared by every stage.
struct RunConfig {
    // dataset
    int styles = 64;
    int contents = 24;
    int image_size = 32;
    std::uint64_t data_seed = 1;
    // feature extractor
    int patch = 8;
    int feature_dim = 64;
    std::uint64_t extractor_seed = 17;
    double position_scale = 1.0;
    // codebook
    int codewords = 128;
    int code_dim = 16;
    double margin = 0.3;
    double alpha = 1.0;
    double beta = 1.0;
    double commit = 0.25;
    bool use_negatives = true;
    bool literal_recon = false;
    int codebook_batch = 32;
    double codebook_lr = 2e-3;
    std::uint64_t codebook_seed = 23;
    int codebook_steps = 5000;
    // style generator
    int ar_width = 64;
    int ar_blocks = 2;
    int ar_heads = 4;
    int ar_batch = 32;
    double ar_lr = 1e-3;
    std::uint64_t ar_seed = 31;
    int ar_steps = 1500;
    double tau_percentile = 0.9;
    double suppression_k = 0.0;  // 0 means 2 / tau
    double temperature = 1.0;
    // flow renderer
    int flow_width = 64;
    int flow_blocks = 2;
    int flow_heads = 4;
    int flow_batch = 32;
    double flow_lr = 2e-3;
    std::uint64_t flow_seed = 41;
    int flow_steps = 4000;
    int sample_steps = 40;
    // paths
    std::string data_dir = "data";
    std::string bundle = "bundle.ctyl";

    bool operator==(const RunConfig&) const = default;

    int style_tokens() const { return (image_size / patch) * (image_size / patch); }
};

// Large reference hyperparameters; far beyond desk budgets.
RunConfig reference_preset();

// Throws std::invalid_argument naming the offending key.
void validate(const RunConfig& config);

std::string to_json(const RunConfig& config);
// Keys absent from the text keep their defaults; unknown keys are an error.
RunConfig config_from_json(const std::string& text);
void apply_json(RunConfig& config, const std::string& text);

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& config, const std::string& path);
// `path` if non-empty, else $CTYL_CONFIG if set, else defaults.
RunConfig resolve_config(const std::string& path);

// Hash of the fields that fix tensor shapes and frozen parameters; checkpoints
// load only into configs with the same value.
std::uint64_t model_hash(const RunConfig& config);

world::DatasetConfig dataset_config(const RunConfig& config);
ExtractorConfig extractor_config(const RunConfig& config);
codebook::CodebookConfig codebook_config(const RunConfig& config);
generator::ARConfig ar_config(const RunConfig& config);
flow::FlowConfig flow_config(const RunConfig& config);

} // namespace stylecode::service
