#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "numerics/adam.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/layers.hpp"

namespace stylecode::generator {

using Sequence = std::vector<std::int32_t>;

struct ARConfig {
    int codewords = 128;  // K; the begin-of-sequence token is K
    int length = 16;      // T
    int width = 64;
    int blocks = 2;
    int heads = 4;
    int batch = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 31;
};

// Decoder-only transformer over style indices (pre-norm blocks).
class ARModel {
public:
    explicit ARModel(const ARConfig& config);

    const ARConfig& config() const { return config_; }
    std::size_t vocab() const { return static_cast<std::size_t>(config_.codewords); }
    std::size_t length() const { return static_cast<std::size_t>(config_.length); }
    std::int32_t bos() const { return config_.codewords; }

    // Inputs are equal-length prefixes (each <= T) that start with the BOS token.
    // Returns (B, L, K) logits; position p predicts token p of the sequence.
    nn::Tensor<float> logits(const std::vector<Sequence>& inputs) const;
    // Next-token logits after BOS + prefix.
    std::vector<double> next_logits(std::span<const std::int32_t> prefix) const;

    // Mean teacher-forced cross-entropy over all T positions of each sequence.
    nn::Tensor<float> loss(const std::vector<Sequence>& sequences) const;

    nn::ParamList<float> parameters() const;
    std::vector<nn::TensorRecord> records() const;
    void load(const std::vector<nn::TensorRecord>& records);

private:
    struct Block {
        nn::LayerNorm<float> ln1, ln2;
        nn::Attention<float> attn;
        nn::FeedForward<float> ff;
    };

    void check_sequence(std::span<const std::int32_t> seq) const;

    ARConfig config_;
    nn::Tensor<float> token_embed_;     // (K+1, W)
    nn::Tensor<float> position_embed_;  // (T, W)
    std::vector<Block> blocks_;
    nn::LayerNorm<float> final_norm_;
    nn::Linear<float> head_;
};

class ARTrainer {
public:
    ARTrainer(ARModel& model, std::vector<Sequence> corpus);

    // One Adam step on a batch drawn with replacement from the corpus.
    double step(CounterRng& rng);
    double step_on(const std::vector<Sequence>& batch);

private:
    ARModel& model_;
    std::vector<Sequence> corpus_;
    nn::Adam<float> adam_;
};

// exp of the mean per-token cross-entropy.
double perplexity(const ARModel& model, const std::vector<Sequence>& sequences);

} // namespace stylecode::generator
