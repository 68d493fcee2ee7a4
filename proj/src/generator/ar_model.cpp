#include "generator/ar_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace stylecode::generator {

using nn::Tensor;

ARModel::ARModel(const ARConfig& config) : config_(config) {
    if (config.codewords < 2 || config.length < 1 || config.blocks < 0 || config.width < 1)
        throw std::invalid_argument("invalid AR model shape");
    const std::size_t w = static_cast<std::size_t>(config.width);
    CounterRng rng(config.seed, 0);
    token_embed_ = nn::randn<float>({vocab() + 1, w}, 0.5, rng);
    position_embed_ = nn::randn<float>({length(), w}, 0.1, rng);
    for (int i = 0; i < config.blocks; ++i) {
        Block b;
        b.ln1 = nn::LayerNorm<float>(w);
        b.ln2 = nn::LayerNorm<float>(w);
        b.attn = nn::Attention<float>(w, static_cast<std::size_t>(config.heads), rng);
        b.ff = nn::FeedForward<float>(w, 4 * w, rng);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = nn::LayerNorm<float>(w);
    // small head keeps the untrained output close to uniform
    head_ = nn::Linear<float>(w, vocab(), rng, 0.1);
}

void ARModel::check_sequence(std::span<const std::int32_t> seq) const {
    for (auto i : seq)
        if (i < 0 || static_cast<std::size_t>(i) >= vocab())
            throw std::out_of_range("style index " + std::to_string(i) + " outside [0, " + std::to_string(vocab()) + ")");
}

Tensor<float> ARModel::logits(const std::vector<Sequence>& inputs) const {
    if (inputs.empty()) throw std::invalid_argument("empty AR batch");
    const std::size_t b = inputs.size(), len = inputs.front().size(), w = static_cast<std::size_t>(config_.width);
    if (len == 0 || len > length()) throw nn::ShapeError("AR input length must be in [1, T]");
    std::vector<std::int32_t> ids;
    ids.reserve(b * len);
    for (const auto& s : inputs) {
        if (s.size() != len) throw nn::ShapeError("AR batch sequences differ in length");
        ids.insert(ids.end(), s.begin(), s.end());
    }
    auto x = nn::reshape(nn::embedding_lookup(token_embed_, ids), {b, len, w});
    x = nn::add(x, nn::slice(position_embed_, 0, 0, len));
    const auto mask = nn::causal_mask<float>(len);
    for (const auto& blk : blocks_) {
        const auto h = blk.ln1(x);
        x = nn::add(x, blk.attn(h, h, &mask));
        x = nn::add(x, blk.ff(blk.ln2(x)));
    }
    return head_(final_norm_(x));
}

std::vector<double> ARModel::next_logits(std::span<const std::int32_t> prefix) const {
    check_sequence(prefix);
    if (prefix.size() >= length()) throw nn::ShapeError("prefix already has T tokens");
    Sequence input{bos()};
    input.insert(input.end(), prefix.begin(), prefix.end());
    nn::NoGradGuard guard;
    const auto out = logits({input});
    const auto last = out.data().subspan(prefix.size() * vocab(), vocab());
    return {last.begin(), last.end()};
}

Tensor<float> ARModel::loss(const std::vector<Sequence>& sequences) const {
    std::vector<Sequence> inputs;
    std::vector<std::int32_t> targets;
    for (const auto& s : sequences) {
        if (s.size() != length()) throw nn::ShapeError("AR training sequences must have length T");
        check_sequence(s);
        Sequence in{bos()};
        in.insert(in.end(), s.begin(), s.end() - 1);
        inputs.push_back(std::move(in));
        targets.insert(targets.end(), s.begin(), s.end());
    }
    const auto out = logits(inputs);
    return nn::cross_entropy(nn::reshape(out, {sequences.size() * length(), vocab()}), targets);
}

nn::ParamList<float> ARModel::parameters() const {
    nn::ParamList<float> out{{"ar.token_embed", token_embed_}, {"ar.position_embed", position_embed_}};
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "ar.block" + std::to_string(i);
        blocks_[i].ln1.collect(p + ".ln1", out);
        blocks_[i].attn.collect(p + ".attn", out);
        blocks_[i].ln2.collect(p + ".ln2", out);
        blocks_[i].ff.collect(p + ".ff", out);
    }
    final_norm_.collect("ar.final_norm", out);
    head_.collect("ar.head", out);
    return out;
}

std::vector<nn::TensorRecord> ARModel::records() const { return nn::to_records(parameters()); }

void ARModel::load(const std::vector<nn::TensorRecord>& records) { nn::assign_records(records, parameters()); }

ARTrainer::ARTrainer(ARModel& model, std::vector<Sequence> corpus)
    : model_(model), corpus_(std::move(corpus)), adam_(model.parameters(), [&] {
          nn::AdamOptions o;
          o.learning_rate = model.config().learning_rate;
          return o;
      }()) {
    if (corpus_.empty()) throw std::invalid_argument("AR training corpus is empty");
}

double ARTrainer::step(CounterRng& rng) {
    std::vector<Sequence> batch;
    for (int i = 0; i < model_.config().batch; ++i) batch.push_back(corpus_[rng.uniform_int(corpus_.size())]);
    return step_on(batch);
}

double ARTrainer::step_on(const std::vector<Sequence>& batch) {
    const auto l = model_.loss(batch);
    const double value = l.item();
    nn::backward(l);
    adam_.step();
    return value;
}

double perplexity(const ARModel& model, const std::vector<Sequence>& sequences) {
    if (sequences.empty()) throw std::invalid_argument("perplexity of an empty set");
    nn::NoGradGuard guard;
    double total = 0;
    constexpr std::size_t chunk = 64;
    for (std::size_t i = 0; i < sequences.size(); i += chunk) {
        const std::vector<Sequence> part(sequences.begin() + static_cast<std::ptrdiff_t>(i),
                                         sequences.begin() + static_cast<std::ptrdiff_t>(std::min(sequences.size(), i + chunk)));
        total += model.loss(part).item() * static_cast<double>(part.size());
    }
    return std::exp(total / static_cast<double>(sequences.size()));
}

} // namespace stylecode::generator
