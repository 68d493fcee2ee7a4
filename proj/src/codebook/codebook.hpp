#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "features/extractor.hpp"
#include "numerics/adam.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/layers.hpp"
#include "styleworld/styleworld.hpp"

namespace stylecode::codebook {

struct CodebookConfig {
    int codewords = 128;  // K
    int code_dim = 16;    // d
    int feature_dim = 64; // D
    double margin = 0.3;
    double alpha = 1.0;   // recon weight
    double beta = 1.0;    // vq weight
    double commit = 0.25;
    bool use_negatives = true;
    bool literal_recon = false;
    int batch = 32;
    double learning_rate = 2e-3;
    std::uint64_t seed = 23;
};

struct LossBreakdown {
    double contrastive = 0;
    double recon = 0;
    double vq = 0;
    double total = 0;
};

struct Quantized {
    std::vector<std::int32_t> indices;  // T
    std::vector<float> codes;           // T x d selected codewords
    PatchFeatures embedding;            // T x D decoder output
};

// Encoder D->d, nearest-codeword quantizer, decoder d->D.
class Codebook {
public:
    explicit Codebook(const CodebookConfig& config);

    const CodebookConfig& config() const { return config_; }
    std::size_t size() const { return static_cast<std::size_t>(config_.codewords); }
    std::size_t code_dim() const { return static_cast<std::size_t>(config_.code_dim); }
    std::size_t feature_dim() const { return static_cast<std::size_t>(config_.feature_dim); }

    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    // Nearest codeword by squared L2 distance, ties to the smallest index.
    std::vector<std::int32_t> nearest(std::span<const float> codes, std::size_t rows) const;

    // Features are scaled to unit norm per token before the encoder.
    std::vector<float> encode_tokens(const PatchFeatures& features) const;
    Quantized quantize(const PatchFeatures& features) const;
    PatchFeatures decode(std::span<const std::int32_t> indices) const;
    // Throws std::logic_error if the codebook has not been trained.
    std::vector<std::int32_t> encode(const PatchFeatures& features) const;

    nn::Tensor<float>& codewords() { return codewords_; }
    const nn::Tensor<float>& codewords() const { return codewords_; }
    const nn::Linear<float>& encoder() const { return encoder_; }
    const nn::Linear<float>& decoder() const { return decoder_; }
    nn::ParamList<float> parameters() const;

    std::vector<nn::TensorRecord> records() const;
    // Loads "cb.*" tensors; the config supplies shapes and is checked against them.
    void load(const std::vector<nn::TensorRecord>& records);

private:
    void check_indices(std::span<const std::int32_t> indices) const;

    CodebookConfig config_;
    nn::Tensor<float> codewords_;
    nn::Linear<float> encoder_;
    nn::Linear<float> decoder_;
    bool trained_ = false;
};

// Frozen, normalized features for every dataset image.
std::vector<PatchFeatures> extract_all(const FeatureExtractor& extractor, const world::Dataset& dataset);

class CodebookTrainer {
public:
    CodebookTrainer(Codebook& codebook, const world::Dataset& dataset, const std::vector<PatchFeatures>& features);

    // Seeds codewords from encoder outputs of randomly chosen training tokens.
    void init_codewords(CounterRng& rng);
    LossBreakdown step(CounterRng& rng);
    // One update on explicit pairs; labels follow the pair order.
    LossBreakdown step_on(const std::vector<world::ImagePair>& pairs);

private:
    Codebook& codebook_;
    const world::Dataset& dataset_;
    const std::vector<PatchFeatures>& features_;
    world::PairSampler sampler_;
    nn::Adam<float> adam_;
};

// Mean cosine of pooled decoded embeddings over positive pairs minus that over negative pairs.
struct Separation {
    double positive = 0;
    double negative = 0;
    double gap() const { return positive - negative; }
};
Separation measure_separation(const Codebook& codebook, const world::Dataset& dataset,
                              const std::vector<PatchFeatures>& features, world::Split split, int pairs,
                              std::uint64_t seed);

// Fraction of codewords selected at least once over the given images.
double codebook_usage(const Codebook& codebook, const std::vector<PatchFeatures>& features,
                      const std::vector<std::size_t>& images);

double cosine(std::span<const float> a, std::span<const float> b);

} // namespace stylecode::codebook
