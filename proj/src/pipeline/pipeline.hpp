#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "codebook/codebook.hpp"
#include "features/extractor.hpp"
#include "flow/flow.hpp"
#include "generator/ar_model.hpp"
#include "generator/sampler.hpp"
#include "styleworld/styleworld.hpp"

namespace stylecode::pipeline {

// Thrown when an operation needs a stage that has not been trained or loaded.
class MissingStage : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Models {
    std::optional<FeatureExtractor> extractor;
    std::optional<codebook::Codebook> codebook;
    std::optional<generator::ARModel> ar;
    std::optional<generator::FrequencyTable> frequencies;
    generator::SuppressionConfig suppression;  // meaningful when frequencies is set
    std::optional<flow::VelocityNet<float>> flow;

    const FeatureExtractor& require_extractor() const;
    const codebook::Codebook& require_codebook() const;
    const generator::ARModel& require_ar() const;
    const generator::FrequencyTable& require_frequencies() const;
    const flow::VelocityNet<float>& require_flow() const;
};

struct SamplingOptions {
    double temperature = 1.0;
    bool suppress = true;  // apply s(i) from the frequency table
};

struct GenerationOptions {
    int steps = 40;
    SamplingOptions sampling;
};

// RNG streams; keys are the style code or an explicit seed.
inline constexpr std::uint64_t kNoiseStream = 0x4e4f4953;
inline constexpr std::uint64_t kMixStream = 0x4d495845;
inline constexpr std::uint64_t kCaptionStream = 0x43415054;

enum class Origin { code, image, indices };

struct StyleHandle {
    Origin origin = Origin::code;
    std::uint64_t code = 0;
    std::string path;
    generator::Sequence indices;
    PatchFeatures embedding;  // decode(indices)
};

generator::Sequence sample_indices(const Models& models, std::uint64_t code, const SamplingOptions& options);
StyleHandle style_from_code(const Models& models, std::uint64_t code, const SamplingOptions& options);
// Throws std::invalid_argument if the image size does not match the extractor.
StyleHandle style_from_image(const Models& models, const Image& image, const std::string& path = {});
StyleHandle style_from_indices(const Models& models, generator::Sequence indices);

// Noise for image `index` generated under `key`.
std::vector<double> image_noise(const Models& models, std::uint64_t key, std::uint64_t index);

// One image per (style, caption, noise) triple.
std::vector<Image> render(const Models& models, const std::vector<const PatchFeatures*>& styles,
                          const std::vector<std::vector<std::int32_t>>& captions,
                          const std::vector<std::vector<double>>& noise, int steps);

struct CodeGeneration {
    generator::Sequence indices;
    std::vector<Image> images;
};

// Image i uses image_noise(code, i); every image shares the style of the code.
CodeGeneration code_to_style_generate(const Models& models, std::uint64_t code,
                                      const std::vector<std::int32_t>& caption, int count,
                                      const GenerationOptions& options);

Image image_conditioned_generate(const Models& models, const Image& reference,
                                 const std::vector<std::int32_t>& caption, int steps, std::uint64_t noise_seed);

enum class MixStrategy { random, split };
MixStrategy parse_strategy(const std::string& name);

// random: position p takes b[p] with probability w; split: the first floor((1-w) T) from a, the rest from b.
generator::Sequence mix_indices(const generator::Sequence& a, const generator::Sequence& b, double w,
                                MixStrategy strategy, CounterRng& rng);

struct InterpolationFrame {
    double weight = 0;
    generator::Sequence indices;
    Image image;
};

// Every weight reuses the same noise (image_noise(seed, 0)) and a fresh mixing RNG keyed by seed.
std::vector<InterpolationFrame> interpolate(const Models& models, const StyleHandle& a, const StyleHandle& b,
                                            const std::vector<double>& weights,
                                            const std::vector<std::int32_t>& caption, int steps,
                                            MixStrategy strategy, std::uint64_t seed);

// ---- evaluation -----------------------------------------------------------

// Proxy style score: pooled decoded embedding of the codebook encoding.
std::vector<float> style_vector(const Models& models, const Image& image);

// Caption for image `index` of a code: a random scene description.
std::vector<std::int32_t> eval_caption(std::uint64_t code, std::uint64_t index, int size);

// Mean pairwise cosine within each group, averaged over groups. Needs >= 2 per group.
double consistency(const std::vector<std::vector<std::vector<float>>>& groups);
// 1 - mean cosine between the first vectors of every pair of distinct groups.
double diversity(const std::vector<std::vector<std::vector<float>>>& groups);

struct StyleCentroids {
    std::vector<int> style_ids;
    std::vector<std::vector<float>> centroids;
    int nearest(const std::vector<float>& v) const;
};
StyleCentroids style_centroids(const Models& models, const world::Dataset& dataset);
std::vector<float> global_mean_embedding(const Models& models, const world::Dataset& dataset);
double mean_similarity_to(const std::vector<std::vector<float>>& vectors, const std::vector<float>& target);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct CodeDetail {
    std::uint64_t code = 0;
    generator::Sequence indices;
    double consistency = 0;
};

struct EvalReport {
    std::size_t codes = 0;
    int count = 0;
    bool suppression = true;
    double consistency = 0;
    double diversity = 0;
    std::optional<double> recovery;
    std::size_t recovery_draws = 0;
    std::vector<CodeDetail> details;
};

inline constexpr const char* kDiversityPairing = "one image per code per pair (image 0 of each code)";

EvalReport evaluate(const Models& models, const std::vector<std::uint64_t>& codes, int count,
                    const GenerationOptions& options);

// Image-conditioned generation from eval-split references; the caption comes
// from the next reference so content differs from the style source.
double recovery_accuracy(const Models& models, const world::Dataset& dataset, const StyleCentroids& centroids,
                         std::size_t draws, int steps, std::uint64_t seed);

std::string report_to_json(const EvalReport& report);

} // namespace stylecode::pipeline
