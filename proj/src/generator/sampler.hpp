#pragma once

#include <cstdint>
#include <vector>

#include "generator/ar_model.hpp"
#include "numerics/checkpoint.hpp"

namespace stylecode::generator {

struct FrequencyTable {
    std::vector<std::uint64_t> counts;  // per index
    std::vector<double> f;              // counts / total
    std::uint64_t total = 0;
};

// Throws std::invalid_argument on an empty corpus, std::out_of_range on an index >= K.
FrequencyTable count_frequencies(const std::vector<Sequence>& corpus, std::size_t codewords);
FrequencyTable table_from_counts(std::vector<std::uint64_t> counts);

std::vector<nn::TensorRecord> frequency_records(const FrequencyTable& table);
FrequencyTable frequency_from_records(const std::vector<nn::TensorRecord>& records);

struct SuppressionConfig {
    double tau = 0.0;
    double k = 0.0;
};

// tau = the given percentile of f over all K entries (linear interpolation), k = 2 / tau.
SuppressionConfig suppression_from_percentile(const FrequencyTable& table, double percentile = 0.9);
void validate(const SuppressionConfig& config);

// 1 below tau, exp(-k (f - tau)) at and above it.
double suppression(double f, const SuppressionConfig& config);
std::vector<double> suppression_coefficients(const FrequencyTable& table, const SuppressionConfig& config);

struct SampleOptions {
    double temperature = 1.0;
    // Per-index multipliers on the next-token probabilities; empty means none.
    std::vector<double> coefficients;
};

// RNG stream reserved for index sampling; the code is the key.
inline constexpr std::uint64_t kSamplerStream = 0x5354594c;

// I0 uniform over [0, K); later positions from the model with suppression.
Sequence sample(const ARModel& model, std::uint64_t code, const SampleOptions& options);

// Probabilities for one step: softmax(logits / temperature) * coefficients, renormalized.
std::vector<double> step_distribution(const std::vector<double>& logits, const SampleOptions& options);

// Indices drawn from f restricted to the top_k most frequent entries (ties to the smaller index).
Sequence sample_high_frequency_only(const FrequencyTable& table, std::size_t top_k, std::size_t length,
                                    std::uint64_t code);
std::vector<std::int32_t> top_indices(const FrequencyTable& table, std::size_t top_k);

} // namespace stylecode::generator
