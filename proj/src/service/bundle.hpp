#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "numerics/checkpoint.hpp"
#include "pipeline/pipeline.hpp"
#include "service/config.hpp"

namespace stylecode::service {

enum Stage : std::uint32_t {
    kStageExtractor = 1u << 0,
    kStageCodebook = 1u << 1,
    kStageGenerator = 1u << 2,
    kStageFrequencies = 1u << 3,
    kStageFlow = 1u << 4,
};
inline constexpr std::uint32_t kAllStages = 0x1f;

std::string stage_names(std::uint32_t stages);

class IncompatibleCheckpoint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// All trained state plus the config it was built with. Only stages whose flag
// is set are present in `models`.
struct Bundle {
    RunConfig config;
    pipeline::Models models;
    std::uint32_t stages = 0;

    bool has(std::uint32_t stage) const { return (stages & stage) == stage; }
    // Throws pipeline::MissingStage naming the first absent stage.
    void require(std::uint32_t stages) const;
};

// Fresh bundle: the frozen extractor only.
Bundle make_bundle(const RunConfig& config);

std::vector<nn::TensorRecord> bundle_records(const Bundle& bundle);
// `config` must hash equal to the stored model hash.
Bundle bundle_from_records(const std::vector<nn::TensorRecord>& records, const RunConfig& config);

// Writes the checkpoint and a sidecar config at path + ".json".
void save_bundle(const Bundle& bundle, const std::string& path);
// Without an explicit config the sidecar config is used.
Bundle load_bundle(const std::string& path);
Bundle load_bundle(const std::string& path, const RunConfig& config);

// ---- training stages ------------------------------------------------------

using Progress = std::function<void(const std::string& stage, int step, int total, double loss)>;

world::Dataset generate_dataset(const RunConfig& config, const std::string& dir);
// Loads a dataset and checks it against the config.
world::Dataset open_dataset(const RunConfig& config, const std::string& dir);

// Each stage clears the flags of the stages that depend on it.
void train_codebook(Bundle& bundle, const world::Dataset& dataset, int steps, const Progress& progress = nullptr);
// Index sequences of the codebook encodings of every image in the split.
std::vector<generator::Sequence> style_corpus(const Bundle& bundle, const world::Dataset& dataset, world::Split split);
void train_generator(Bundle& bundle, const world::Dataset& dataset, int steps, const Progress& progress = nullptr);
void compute_frequencies(Bundle& bundle, const world::Dataset& dataset);
void train_flow(Bundle& bundle, const world::Dataset& dataset, int steps, const Progress& progress = nullptr);

} // namespace stylecode::service
