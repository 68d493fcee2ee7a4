#include "features/extractor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "numerics/rng.hpp"
#include "numerics/tensor.hpp"

namespace stylecode {

FeatureExtractor::FeatureExtractor(const ExtractorConfig& config) : config_(config) {
    if (config.patch < 1 || config.image_size < 1 || config.image_size % config.patch != 0)
        throw std::invalid_argument("image size " + std::to_string(config.image_size) +
                                    " is not divisible by patch " + std::to_string(config.patch));
    if (config.dim < 1) throw std::invalid_argument("feature width must be positive");
    grid_ = static_cast<std::size_t>(config.image_size / config.patch);

    CounterRng proj_rng(config.seed, 0);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(patch_dim()));
    projection_.resize(patch_dim() * dim());
    for (auto& w : projection_) w = static_cast<float>(proj_rng.normal() * stddev);

    // projection outputs of a [-1,1] patch have roughly unit scale per channel
    CounterRng pos_rng(config.seed, 1);
    offsets_.resize(tokens() * dim());
    for (auto& o : offsets_) o = static_cast<float>(pos_rng.normal() * config.position_scale);
}

PatchFeatures FeatureExtractor::project(const Image& image) const {
    if (image.width != config_.image_size || image.height != config_.image_size)
        throw std::invalid_argument("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                    ", extractor expects " + std::to_string(config_.image_size));
    const int p = config_.patch;
    const std::size_t d = dim();
    PatchFeatures out{tokens(), d, std::vector<float>(tokens() * d, 0.0f)};
    std::vector<double> patch(patch_dim());
    std::vector<double> acc(d);
    for (std::size_t gy = 0; gy < grid_; ++gy) {
        for (std::size_t gx = 0; gx < grid_; ++gx) {
            std::size_t k = 0;
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x) {
                    const auto* px = image.pixel(static_cast<int>(gx) * p + x, static_cast<int>(gy) * p + y);
                    for (int c = 0; c < 3; ++c) patch[k++] = px[c] / 127.5 - 1.0;
                }
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t i = 0; i < patch.size(); ++i) {
                const float* w = projection_.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) acc[j] += patch[i] * w[j];
            }
            float* row = out.values.data() + (gy * grid_ + gx) * d;
            for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(acc[j]);
        }
    }
    return out;
}

PatchFeatures FeatureExtractor::extract(const Image& image) const {
    PatchFeatures out = project(image);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += offsets_[i];
    return out;
}

std::vector<nn::TensorRecord> FeatureExtractor::records() const {
    return {nn::u64_record("fx.config", {static_cast<std::uint64_t>(config_.image_size),
                                         static_cast<std::uint64_t>(config_.patch),
                                         static_cast<std::uint64_t>(config_.dim), config_.seed}),
            nn::TensorRecord{"fx.position_scale", {1}, {static_cast<float>(config_.position_scale)}}};
}

FeatureExtractor FeatureExtractor::from_records(const std::vector<nn::TensorRecord>& records) {
    const auto cfg = nn::record_u64(nn::require_record(records, "fx.config"));
    if (cfg.size() != 4) throw nn::FormatError("fx.config must hold 4 integers");
    ExtractorConfig c;
    c.image_size = static_cast<int>(cfg[0]);
    c.patch = static_cast<int>(cfg[1]);
    c.dim = static_cast<int>(cfg[2]);
    c.seed = cfg[3];
    c.position_scale = nn::require_record(records, "fx.position_scale").data.at(0);
    return FeatureExtractor(c);
}

PatchFeatures normalize_tokens(const PatchFeatures& features) {
    PatchFeatures out = features;
    for (std::size_t t = 0; t < out.tokens; ++t) {
        float* row = out.values.data() + t * out.dim;
        double norm = 0.0;
        for (std::size_t j = 0; j < out.dim; ++j) norm += static_cast<double>(row[j]) * row[j];
        norm = std::max(std::sqrt(norm), nn::kEps);
        for (std::size_t j = 0; j < out.dim; ++j) row[j] = static_cast<float>(row[j] / norm);
    }
    return out;
}

std::vector<float> pooled(const PatchFeatures& features) {
    std::vector<double> acc(features.dim, 0.0);
    for (std::size_t t = 0; t < features.tokens; ++t)
        for (std::size_t j = 0; j < features.dim; ++j) acc[j] += features.row(t)[j];
    std::vector<float> out(features.dim);
    for (std::size_t j = 0; j < features.dim; ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(features.tokens));
    return out;
}

} // namespace stylecode
