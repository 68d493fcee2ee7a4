#pragma once

#include <cstdint>
#include <vector>

#include "numerics/checkpoint.hpp"
#include "styleworld/image.hpp"

namespace stylecode {

// T x D row-major feature tokens of one image.
struct PatchFeatures {
    std::size_t tokens = 0;
    std::size_t dim = 0;
    std::vector<float> values;

    const float* row(std::size_t t) const { return values.data() + t * dim; }
    bool operator==(const PatchFeatures&) const = default;
};

struct ExtractorConfig {
    int image_size = 32;
    int patch = 8;
    int dim = 64;
    std::uint64_t seed = 17;
    double position_scale = 1.0;  // offset stddev; projection outputs are roughly unit scale
};

// Frozen random-projection patch encoder. Parameters are a pure function
// of the config and never change after construction.
class FeatureExtractor {
public:
    explicit FeatureExtractor(const ExtractorConfig& config);

    const ExtractorConfig& config() const { return config_; }
    std::size_t tokens() const { return grid_ * grid_; }
    std::size_t dim() const { return static_cast<std::size_t>(config_.dim); }
    std::size_t patch_dim() const { return static_cast<std::size_t>(config_.patch * config_.patch * 3); }

    // Projected patches plus positional offsets.
    PatchFeatures extract(const Image& image) const;
    // Projected patches only, before positional offsets are added.
    PatchFeatures project(const Image& image) const;

    const std::vector<float>& projection() const { return projection_; }  // patch_dim x D
    const std::vector<float>& offsets() const { return offsets_; }        // T x D

    std::vector<nn::TensorRecord> records() const;
    static FeatureExtractor from_records(const std::vector<nn::TensorRecord>& records);

private:
    ExtractorConfig config_;
    std::size_t grid_ = 0;
    std::vector<float> projection_;
    std::vector<float> offsets_;
};

// Scales each token to unit L2 norm (eps-floored).
PatchFeatures normalize_tokens(const PatchFeatures& features);
// Mean over tokens.
std::vector<float> pooled(const PatchFeatures& features);

} // namespace stylecode
