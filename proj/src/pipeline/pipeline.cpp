#include "pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace stylecode::pipeline {

using generator::Sequence;

const FeatureExtractor& Models::require_extractor() const {
    if (!extractor) throw MissingStage("feature extractor is not loaded");
    return *extractor;
}

const codebook::Codebook& Models::require_codebook() const {
    if (!codebook || !codebook->trained()) throw MissingStage("codebook checkpoint is missing");
    return *codebook;
}

const generator::ARModel& Models::require_ar() const {
    if (!ar) throw MissingStage("style generator checkpoint is missing");
    return *ar;
}

const generator::FrequencyTable& Models::require_frequencies() const {
    if (!frequencies) throw MissingStage("frequency table is missing");
    return *frequencies;
}

const flow::VelocityNet<float>& Models::require_flow() const {
    if (!flow) throw MissingStage("flow renderer checkpoint is missing");
    return *flow;
}

Sequence sample_indices(const Models& models, std::uint64_t code, const SamplingOptions& options) {
    generator::SampleOptions o;
    o.temperature = options.temperature;
    if (options.suppress)
        o.coefficients = generator::suppression_coefficients(models.require_frequencies(), models.suppression);
    return generator::sample(models.require_ar(), code, o);
}

StyleHandle style_from_indices(const Models& models, Sequence indices) {
    StyleHandle h;
    h.origin = Origin::indices;
    h.embedding = models.require_codebook().decode(indices);
    h.indices = std::move(indices);
    return h;
}

StyleHandle style_from_code(const Models& models, std::uint64_t code, const SamplingOptions& options) {
    auto h = style_from_indices(models, sample_indices(models, code, options));
    h.origin = Origin::code;
    h.code = code;
    return h;
}

StyleHandle style_from_image(const Models& models, const Image& image, const std::string& path) {
    const auto& fx = models.require_extractor();
    const int size = fx.config().image_size;
    if (image.width != size || image.height != size)
        throw std::invalid_argument("reference image must be " + std::to_string(size) + "x" + std::to_string(size));
    auto h = style_from_indices(models, models.require_codebook().encode(normalize_tokens(fx.extract(image))));
    h.origin = Origin::image;
    h.path = path;
    return h;
}

std::vector<double> image_noise(const Models& models, std::uint64_t key, std::uint64_t index) {
    CounterRng rng(mix_seed(key, index), kNoiseStream);
    return flow::draw_noise(models.require_flow(), rng);
}

std::vector<Image> render(const Models& models, const std::vector<const PatchFeatures*>& styles,
                          const std::vector<std::vector<std::int32_t>>& captions,
                          const std::vector<std::vector<double>>& noise, int steps) {
    if (styles.size() != captions.size() || styles.size() != noise.size())
        throw std::invalid_argument("render needs one style, caption and noise draw per image");
    std::vector<flow::Condition> cond;
    for (std::size_t i = 0; i < styles.size(); ++i) cond.push_back({styles[i]->values, captions[i]});
    return flow::generate(models.require_flow(), cond, noise, steps);
}

CodeGeneration code_to_style_generate(const Models& models, std::uint64_t code,
                                      const std::vector<std::int32_t>& caption, int count,
                                      const GenerationOptions& options) {
    if (count < 1) throw std::invalid_argument("count must be at least 1");
    models.require_flow();
    const auto style = style_from_code(models, code, options.sampling);
    std::vector<const PatchFeatures*> styles(static_cast<std::size_t>(count), &style.embedding);
    std::vector<std::vector<std::int32_t>> captions(static_cast<std::size_t>(count), caption);
    std::vector<std::vector<double>> noise;
    for (int i = 0; i < count; ++i) noise.push_back(image_noise(models, code, static_cast<std::uint64_t>(i)));
    return {style.indices, render(models, styles, captions, noise, options.steps)};
}

Image image_conditioned_generate(const Models& models, const Image& reference,
                                 const std::vector<std::int32_t>& caption, int steps, std::uint64_t noise_seed) {
    const auto style = style_from_image(models, reference);
    return render(models, {&style.embedding}, {caption}, {image_noise(models, noise_seed, 0)}, steps)[0];
}

MixStrategy parse_strategy(const std::string& name) {
    if (name == "random") return MixStrategy::random;
    if (name == "split") return MixStrategy::split;
    throw std::invalid_argument("unknown mixing strategy: " + name);
}

Sequence mix_indices(const Sequence& a, const Sequence& b, double w, MixStrategy strategy, CounterRng& rng) {
    if (a.size() != b.size()) throw std::invalid_argument("index sequences differ in length");
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("mixing weight must lie in [0, 1]");
    Sequence out(a.size());
    if (strategy == MixStrategy::random) {
        for (std::size_t p = 0; p < a.size(); ++p) out[p] = rng.uniform() < w ? b[p] : a[p];
    } else {
        const auto from_a = static_cast<std::size_t>(std::floor((1.0 - w) * static_cast<double>(a.size())));
        for (std::size_t p = 0; p < a.size(); ++p) out[p] = p < from_a ? a[p] : b[p];
    }
    return out;
}

std::vector<InterpolationFrame> interpolate(const Models& models, const StyleHandle& a, const StyleHandle& b,
                                            const std::vector<double>& weights,
                                            const std::vector<std::int32_t>& caption, int steps,
                                            MixStrategy strategy, std::uint64_t seed) {
    if (weights.empty()) throw std::invalid_argument("interpolation needs at least one weight");
    const auto noise = image_noise(models, seed, 0);
    std::vector<InterpolationFrame> frames;
    std::vector<StyleHandle> styles;
    for (double w : weights) {
        CounterRng rng(seed, kMixStream);
        styles.push_back(style_from_indices(models, mix_indices(a.indices, b.indices, w, strategy, rng)));
        frames.push_back({w, styles.back().indices, {}});
    }
    std::vector<const PatchFeatures*> ptrs;
    for (const auto& s : styles) ptrs.push_back(&s.embedding);
    const auto images = render(models, ptrs, std::vector(weights.size(), caption),
                               std::vector(weights.size(), noise), steps);
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i].image = images[i];
    return frames;
}

// ---- evaluation -----------------------------------------------------------

std::vector<float> style_vector(const Models& models, const Image& image) {
    return pooled(style_from_image(models, image).embedding);
}

std::vector<std::int32_t> eval_caption(std::uint64_t code, std::uint64_t index, int size) {
    CounterRng rng(mix_seed(code, index), kCaptionStream);
    return world::random_content(rng, size).caption_tokens;
}

double consistency(const std::vector<std::vector<std::vector<float>>>& groups) {
    if (groups.empty()) throw std::invalid_argument("consistency needs at least one group");
    double total = 0;
    for (const auto& g : groups) {
        if (g.size() < 2) throw std::invalid_argument("consistency needs at least 2 images per code");
        double sum = 0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = i + 1; j < g.size(); ++j, ++pairs) sum += codebook::cosine(g[i], g[j]);
        total += sum / static_cast<double>(pairs);
    }
    return total / static_cast<double>(groups.size());
}

double diversity(const std::vector<std::vector<std::vector<float>>>& groups) {
    if (groups.size() < 2) throw std::invalid_argument("diversity needs at least 2 codes");
    double sum = 0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < groups.size(); ++a)
        for (std::size_t b = a + 1; b < groups.size(); ++b, ++pairs)
            sum += codebook::cosine(groups[a].at(0), groups[b].at(0));
    return 1.0 - sum / static_cast<double>(pairs);
}

int StyleCentroids::nearest(const std::vector<float>& v) const {
    if (centroids.empty()) throw std::logic_error("no style centroids");
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t i = 0; i < centroids.size(); ++i) {
        const double s = codebook::cosine(v, centroids[i]);
        if (s > best_sim) {
            best_sim = s;
            best = i;
        }
    }
    return style_ids[best];
}

namespace {

std::vector<float> mean_of(const std::vector<std::vector<float>>& vs) {
    std::vector<double> acc(vs.at(0).size(), 0.0);
    for (const auto& v : vs)
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v[j];
    std::vector<float> out(acc.size());
    for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<float>(acc[j] / static_cast<double>(vs.size()));
    return out;
}

} // namespace

StyleCentroids style_centroids(const Models& models, const world::Dataset& dataset) {
    std::vector<std::vector<std::vector<float>>> by_style(dataset.styles.size());
    for (auto i : dataset.indices(world::Split::train))
        by_style.at(static_cast<std::size_t>(dataset.manifest.records[i].style_id))
            .push_back(style_vector(models, dataset.images[i]));
    StyleCentroids c;
    for (std::size_t s = 0; s < by_style.size(); ++s) {
        if (by_style[s].empty()) continue;
        c.style_ids.push_back(static_cast<int>(s));
        c.centroids.push_back(mean_of(by_style[s]));
    }
    return c;
}

std::vector<float> global_mean_embedding(const Models& models, const world::Dataset& dataset) {
    std::vector<std::vector<float>> all;
    for (auto i : dataset.indices(world::Split::train)) all.push_back(style_vector(models, dataset.images[i]));
    if (all.empty()) throw std::invalid_argument("dataset has no training images");
    return mean_of(all);
}

double mean_similarity_to(const std::vector<std::vector<float>>& vectors, const std::vector<float>& target) {
    if (vectors.empty()) throw std::invalid_argument("no vectors to compare");
    double s = 0;
    for (const auto& v : vectors) s += codebook::cosine(v, target);
    return s / static_cast<double>(vectors.size());
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman needs two equal series of length >= 2");
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

EvalReport evaluate(const Models& models, const std::vector<std::uint64_t>& codes, int count,
                    const GenerationOptions& options) {
    if (count < 2) throw std::invalid_argument("evaluation needs at least 2 images per code");
    if (codes.size() < 2) throw std::invalid_argument("evaluation needs at least 2 codes");
    const int size = models.require_flow().config().image_size;
    const std::size_t n = static_cast<std::size_t>(count);
    EvalReport report;
    report.codes = codes.size();
    report.count = count;
    report.suppression = options.sampling.suppress;
    std::vector<std::vector<std::vector<float>>> groups;
    for (auto code : codes) {
        const auto style = style_from_code(models, code, options.sampling);
        std::vector<std::vector<std::int32_t>> captions;
        std::vector<std::vector<double>> noise;
        for (std::size_t i = 0; i < n; ++i) {
            captions.push_back(eval_caption(code, i, size));
            noise.push_back(image_noise(models, code, i));
        }
        const auto images = render(models, std::vector(n, &style.embedding), captions, noise, options.steps);
        std::vector<std::vector<float>> vs;
        for (const auto& img : images) vs.push_back(style_vector(models, img));
        groups.push_back(std::move(vs));
        report.details.push_back({code, style.indices, consistency({groups.back()})});
    }
    report.consistency = consistency(groups);
    report.diversity = diversity(groups);
    return report;
}

double recovery_accuracy(const Models& models, const world::Dataset& dataset, const StyleCentroids& centroids,
                         std::size_t draws, int steps, std::uint64_t seed) {
    const auto refs = dataset.indices(world::Split::eval);
    if (refs.size() < 2) throw std::invalid_argument("recovery needs an eval split with at least 2 images");
    if (draws == 0) throw std::invalid_argument("recovery needs at least one draw");
    std::size_t correct = 0;
    constexpr std::size_t kBatch = 32;
    for (std::size_t start = 0; start < draws; start += kBatch) {
        std::vector<StyleHandle> styles;
        std::vector<std::vector<std::int32_t>> captions;
        std::vector<std::vector<double>> noise;
        std::vector<int> truth;
        for (std::size_t k = start; k < std::min(draws, start + kBatch); ++k) {
            const auto ref = refs[k % refs.size()], other = refs[(k + 1) % refs.size()];
            styles.push_back(style_from_image(models, dataset.images[ref]));
            captions.push_back(dataset.manifest.records[other].caption_tokens);
            noise.push_back(image_noise(models, seed, k));
            truth.push_back(dataset.manifest.records[ref].style_id);
        }
        std::vector<const PatchFeatures*> ptrs;
        for (const auto& s : styles) ptrs.push_back(&s.embedding);
        const auto images = render(models, ptrs, captions, noise, steps);
        for (std::size_t i = 0; i < images.size(); ++i)
            correct += centroids.nearest(style_vector(models, images[i])) == truth[i];
    }
    return static_cast<double>(correct) / static_cast<double>(draws);
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["codes"] = report.codes;
    j["count"] = report.count;
    j["suppression"] = report.suppression;
    j["diversity_pairing"] = kDiversityPairing;
    j["consistency"] = report.consistency;
    j["diversity"] = report.diversity;
    j["cross_code_similarity"] = 1.0 - report.diversity;
    if (report.recovery) {
        j["recovery"] = *report.recovery;
        j["recovery_draws"] = report.recovery_draws;
    }
    auto& details = j["per_code"] = nlohmann::json::array();
    for (const auto& d : report.details)
        details.push_back({{"code", d.code}, {"indices", d.indices}, {"consistency", d.consistency}});
    return j.dump(2) + "\n";
}

} // namespace stylecode::pipeline
