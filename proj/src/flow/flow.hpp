#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "features/extractor.hpp"
#include "numerics/adam.hpp"
#include "numerics/checkpoint.hpp"
#include "numerics/layers.hpp"
#include "styleworld/styleworld.hpp"

namespace stylecode::flow {

struct FlowConfig {
    int image_size = 32;
    int patch = 8;
    int width = 64;
    int blocks = 2;
    int heads = 4;
    int feature_dim = 64;    // D of the style embedding rows
    int style_tokens = 16;   // T
    int caption_length = static_cast<int>(world::kCaptionLength);
    int vocab = static_cast<int>(world::kVocabSize);
    int batch = 32;
    double learning_rate = 1e-3;
    int sample_steps = 40;
    std::uint64_t seed = 41;
};

// Image <-> (N, P) patch rows with pixels mapped to [-1, 1].
std::vector<double> to_patches(const Image& image, int patch);
Image from_patches(std::span<const double> patches, int size, int patch);

// Conditioning for one image: T x D style rows plus caption tokens.
struct Condition {
    std::vector<float> style;  // T x D
    std::vector<std::int32_t> caption;
};

template <typename T>
class VelocityNet {
public:
    explicit VelocityNet(const FlowConfig& config);

    const FlowConfig& config() const { return config_; }
    std::size_t tokens() const { return grid_ * grid_; }
    std::size_t patch_dim() const { return static_cast<std::size_t>(config_.patch * config_.patch * 3); }

    // x: (B, N, P); t: B times in [0, 1]; returns (B, N, P) velocities.
    nn::Tensor<T> operator()(const nn::Tensor<T>& x, std::span<const double> t,
                             const std::vector<const Condition*>& cond) const;

    nn::ParamList<T> parameters() const;

private:
    struct Block {
        nn::LayerNorm<T> ln1, ln2, ln3;
        nn::Attention<T> self_attn, cross_attn;
        nn::FeedForward<T> ff;
    };

    nn::Tensor<T> time_features(std::span<const double> t) const;

    FlowConfig config_;
    std::size_t grid_ = 0;
    nn::Linear<T> patch_in_;
    nn::Tensor<T> position_;      // (N, W)
    nn::Linear<T> time_proj_;
    nn::Linear<T> style_proj_;
    nn::Tensor<T> style_position_;  // (T, W)
    nn::Tensor<T> caption_embed_;   // (V, W)
    nn::Tensor<T> caption_position_;  // (L, W)
    nn::LayerNorm<T> cond_norm_;
    std::vector<Block> blocks_;
    nn::LayerNorm<T> final_norm_;
    nn::Linear<T> patch_out_;
    // time-dependent per-channel gain on x_t added to the output
    nn::Linear<T> skip_;
};

// Rectified-flow training sample: x_t = (1 - t) x + t eps, target eps - x.
template <typename T>
struct FlowBatch {
    nn::Tensor<T> x_t;
    nn::Tensor<T> target;
    std::vector<double> t;
};

template <typename T>
FlowBatch<T> make_flow_batch(std::span<const double> data, std::span<const double> noise, std::vector<double> t,
                             std::size_t tokens, std::size_t patch_dim);

template <typename T>
nn::Tensor<T> flow_matching_loss(const nn::Tensor<T>& velocity, const FlowBatch<T>& batch);

// A training pair: style from `style_source`, caption and pixels from `target`.
struct FlowPair {
    std::size_t style_source = 0;
    std::size_t target = 0;
};

class FlowTrainer {
public:
    // styles[i] is the decoded style embedding of dataset image i.
    FlowTrainer(VelocityNet<float>& net, const world::Dataset& dataset, std::vector<std::vector<float>> styles);

    double step(CounterRng& rng);
    // Throws std::invalid_argument if a pair is not same-style or uses one image for both roles.
    double step_on(const std::vector<FlowPair>& pairs, CounterRng& rng);
    const std::vector<FlowPair>& last_pairs() const { return last_pairs_; }

private:
    VelocityNet<float>& net_;
    const world::Dataset& dataset_;
    std::vector<std::vector<float>> styles_;
    std::vector<std::vector<double>> patches_;
    world::PairSampler sampler_;
    nn::Adam<float> adam_;
    std::vector<FlowPair> last_pairs_;
};

// Euler integration from t=1 to t=0 starting at `noise` (B x N x P rows), then clamp.
std::vector<std::vector<double>> integrate(const VelocityNet<float>& net, std::vector<std::vector<double>> noise,
                                           const std::vector<const Condition*>& cond, int steps);

// Standard normal noise for one image from its own RNG.
std::vector<double> draw_noise(const VelocityNet<float>& net, CounterRng& rng);

std::vector<Image> generate(const VelocityNet<float>& net, const std::vector<Condition>& cond,
                            const std::vector<std::vector<double>>& noise, int steps);

std::vector<nn::TensorRecord> flow_records(const VelocityNet<float>& net);
void load_flow(VelocityNet<float>& net, const std::vector<nn::TensorRecord>& records);

} // namespace stylecode::flow
