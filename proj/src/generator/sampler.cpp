#include "generator/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace stylecode::generator {

FrequencyTable table_from_counts(std::vector<std::uint64_t> counts) {
    FrequencyTable t;
    t.total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
    if (t.total == 0) throw std::invalid_argument("frequency table over an empty corpus");
    t.counts = std::move(counts);
    for (auto c : t.counts) t.f.push_back(static_cast<double>(c) / static_cast<double>(t.total));
    return t;
}

FrequencyTable count_frequencies(const std::vector<Sequence>& corpus, std::size_t codewords) {
    std::vector<std::uint64_t> counts(codewords, 0);
    for (const auto& seq : corpus)
        for (auto i : seq) {
            if (i < 0 || static_cast<std::size_t>(i) >= codewords)
                throw std::out_of_range("style index " + std::to_string(i) + " outside the codebook");
            ++counts[static_cast<std::size_t>(i)];
        }
    return table_from_counts(std::move(counts));
}

std::vector<nn::TensorRecord> frequency_records(const FrequencyTable& table) {
    nn::TensorRecord freq{"freq", {table.f.size()}, {}};
    for (auto v : table.f) freq.data.push_back(static_cast<float>(v));
    return {freq, nn::u64_record("freq.counts", table.counts)};
}

FrequencyTable frequency_from_records(const std::vector<nn::TensorRecord>& records) {
    // counts are exact; the f32 "freq" tensor is for external readers
    return table_from_counts(nn::record_u64(nn::require_record(records, "freq.counts")));
}

SuppressionConfig suppression_from_percentile(const FrequencyTable& table, double percentile) {
    if (!(percentile > 0 && percentile < 1)) throw std::invalid_argument("percentile must be in (0, 1)");
    std::vector<double> sorted = table.f;
    std::sort(sorted.begin(), sorted.end());
    const double pos = percentile * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double tau = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    SuppressionConfig c{tau, tau > 0 ? 2.0 / tau : 0.0};
    validate(c);
    return c;
}

void validate(const SuppressionConfig& config) {
    if (!(config.tau > 0 && config.tau < 1)) throw std::invalid_argument("suppression tau must be in (0, 1)");
    if (!(config.k > 0)) throw std::invalid_argument("suppression k must be positive");
}

double suppression(double f, const SuppressionConfig& config) {
    return f < config.tau ? 1.0 : std::exp(-config.k * (f - config.tau));
}

std::vector<double> suppression_coefficients(const FrequencyTable& table, const SuppressionConfig& config) {
    validate(config);
    std::vector<double> s;
    for (auto f : table.f) s.push_back(suppression(f, config));
    return s;
}

std::vector<double> step_distribution(const std::vector<double>& logits, const SampleOptions& options) {
    if (!(options.temperature > 0)) throw std::invalid_argument("temperature must be positive");
    if (!options.coefficients.empty() && options.coefficients.size() != logits.size())
        throw std::invalid_argument("suppression coefficients do not match the vocabulary");
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0;
    for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp((logits[i] - top) / options.temperature);
    double mass = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] /= z;
        if (!options.coefficients.empty()) p[i] *= options.coefficients[i];
        mass += p[i];
    }
    if (!(mass > 0)) throw std::runtime_error("suppression removed all probability mass");
    for (auto& v : p) v /= mass;
    return p;
}

namespace {

std::int32_t draw(const std::vector<double>& p, CounterRng& rng) {
    const double u = rng.uniform();
    double acc = 0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0) continue;
        acc += p[i];
        last = i;
        if (u < acc) return static_cast<std::int32_t>(i);
    }
    return static_cast<std::int32_t>(last);  // rounding left u above the final sum
}

} // namespace

Sequence sample(const ARModel& model, std::uint64_t code, const SampleOptions& options) {
    if (!(options.temperature > 0)) throw std::invalid_argument("temperature must be positive");
    CounterRng rng(code, kSamplerStream);
    Sequence seq{static_cast<std::int32_t>(rng.uniform_int(model.vocab()))};
    while (seq.size() < model.length()) seq.push_back(draw(step_distribution(model.next_logits(seq), options), rng));
    return seq;
}

std::vector<std::int32_t> top_indices(const FrequencyTable& table, std::size_t top_k) {
    if (top_k == 0 || top_k > table.f.size()) throw std::invalid_argument("top-k must be in [1, K]");
    std::vector<std::int32_t> order(table.f.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
        return table.counts[static_cast<std::size_t>(a)] > table.counts[static_cast<std::size_t>(b)];
    });
    order.resize(top_k);
    return order;
}

Sequence sample_high_frequency_only(const FrequencyTable& table, std::size_t top_k, std::size_t length,
                                    std::uint64_t code) {
    const auto top = top_indices(table, top_k);
    std::vector<double> p(table.f.size(), 0.0);
    double mass = 0;
    for (auto i : top) mass += table.f[static_cast<std::size_t>(i)];
    for (auto i : top) p[static_cast<std::size_t>(i)] = mass > 0 ? table.f[static_cast<std::size_t>(i)] / mass : 1.0 / top_k;
    CounterRng rng(code, kSamplerStream);
    Sequence seq;
    for (std::size_t t = 0; t < length; ++t) seq.push_back(draw(p, rng));
    return seq;
}

} // namespace stylecode::generator
