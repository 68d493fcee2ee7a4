#include "flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace stylecode::flow {

using nn::Tensor;

std::vector<double> to_patches(const Image& image, int patch) {
    const int grid = image.width / patch;
    const std::size_t pd = static_cast<std::size_t>(patch * patch * 3);
    std::vector<double> out(static_cast<std::size_t>(grid * grid) * pd);
    std::size_t k = 0;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) {
                    const auto* px = image.pixel(gx * patch + x, gy * patch + y);
                    for (int c = 0; c < 3; ++c) out[k++] = px[c] / 127.5 - 1.0;
                }
    return out;
}

Image from_patches(std::span<const double> patches, int size, int patch) {
    const int grid = size / patch;
    Image img(size, size);
    std::size_t k = 0;
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) {
                    auto* px = img.pixel(gx * patch + x, gy * patch + y);
                    for (int c = 0; c < 3; ++c) {
                        const double v = std::clamp(patches[k++], -1.0, 1.0);
                        px[c] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
                    }
                }
    return img;
}

template <typename T>
VelocityNet<T>::VelocityNet(const FlowConfig& config) : config_(config) {
    if (config.patch < 1 || config.image_size % config.patch != 0)
        throw std::invalid_argument("flow image size must be divisible by the patch size");
    if (config.width % 2 != 0) throw std::invalid_argument("flow width must be even");
    grid_ = static_cast<std::size_t>(config.image_size / config.patch);
    const auto w = static_cast<std::size_t>(config.width);
    CounterRng rng(config.seed, 0);
    patch_in_ = nn::Linear<T>(patch_dim(), w, rng);
    position_ = nn::randn<T>({tokens(), w}, 0.1, rng);
    time_proj_ = nn::Linear<T>(w, w, rng);
    style_proj_ = nn::Linear<T>(static_cast<std::size_t>(config.feature_dim), w, rng);
    style_position_ = nn::randn<T>({static_cast<std::size_t>(config.style_tokens), w}, 0.1, rng);
    caption_embed_ = nn::randn<T>({static_cast<std::size_t>(config.vocab), w}, 0.5, rng);
    caption_position_ = nn::randn<T>({static_cast<std::size_t>(config.caption_length), w}, 0.1, rng);
    cond_norm_ = nn::LayerNorm<T>(w);
    for (int i = 0; i < config.blocks; ++i) {
        Block b;
        b.ln1 = nn::LayerNorm<T>(w);
        b.ln2 = nn::LayerNorm<T>(w);
        b.ln3 = nn::LayerNorm<T>(w);
        b.self_attn = nn::Attention<T>(w, static_cast<std::size_t>(config.heads), rng);
        b.cross_attn = nn::Attention<T>(w, static_cast<std::size_t>(config.heads), rng);
        b.ff = nn::FeedForward<T>(w, 4 * w, rng);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = nn::LayerNorm<T>(w);
    // near-zero output so the untrained velocity is close to 0
    patch_out_ = nn::Linear<T>(w, patch_dim(), rng, 0.02);
    skip_ = nn::Linear<T>(w, patch_dim(), rng, 0.02);
}

template <typename T>
Tensor<T> VelocityNet<T>::time_features(std::span<const double> t) const {
    // sinusoidal features of 1000 t, repeated for each image token
    const std::size_t w = static_cast<std::size_t>(config_.width), half = w / 2, n = tokens();
    std::vector<T> data(t.size() * n * w);
    for (std::size_t b = 0; b < t.size(); ++b) {
        if (!(t[b] >= 0.0 && t[b] <= 1.0)) throw std::invalid_argument("flow time must lie in [0, 1]");
        std::vector<T> row(w);
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            row[i] = static_cast<T>(std::sin(1000.0 * t[b] * freq));
            row[half + i] = static_cast<T>(std::cos(1000.0 * t[b] * freq));
        }
        for (std::size_t k = 0; k < n; ++k) std::copy(row.begin(), row.end(), data.begin() + static_cast<std::ptrdiff_t>((b * n + k) * w));
    }
    return Tensor<T>::from_data({t.size(), n, w}, std::move(data));
}

template <typename T>
Tensor<T> VelocityNet<T>::operator()(const Tensor<T>& x, std::span<const double> t,
                                     const std::vector<const Condition*>& cond) const {
    const std::size_t b = t.size(), n = tokens(), w = static_cast<std::size_t>(config_.width);
    const std::size_t st = static_cast<std::size_t>(config_.style_tokens), d = static_cast<std::size_t>(config_.feature_dim);
    const std::size_t cl = static_cast<std::size_t>(config_.caption_length);
    if (x.shape() != nn::Shape{b, n, patch_dim()} || cond.size() != b)
        throw nn::ShapeError("velocity net expects (B, N, P) input with B times and conditions");

    std::vector<T> style;
    std::vector<std::int32_t> caption;
    for (const auto* c : cond) {
        if (c->style.size() != st * d) throw nn::ShapeError("style embedding must be T x D");
        if (c->caption.size() != cl) throw nn::ShapeError("caption has the wrong length");
        style.insert(style.end(), c->style.begin(), c->style.end());
        caption.insert(caption.end(), c->caption.begin(), c->caption.end());
    }
    for (auto id : caption)
        if (id < 0 || id >= config_.vocab) throw std::out_of_range("caption token outside the vocabulary");

    const auto style_tokens =
        nn::add(style_proj_(Tensor<T>::from_data({b, st, d}, std::move(style))), style_position_);
    const auto caption_tokens =
        nn::add(nn::reshape(nn::embedding_lookup(caption_embed_, caption), {b, cl, w}), caption_position_);
    const auto context = cond_norm_(nn::concat<T>({style_tokens, caption_tokens}, 1));

    const auto time = time_features(t);
    auto h = nn::add(patch_in_(x), position_);
    h = nn::add(h, time_proj_(time));
    for (const auto& blk : blocks_) {
        const auto a = blk.ln1(h);
        h = nn::add(h, blk.self_attn(a, a));
        h = nn::add(h, blk.cross_attn(blk.ln2(h), context));
        h = nn::add(h, blk.ff(blk.ln3(h)));
    }
    return nn::add(patch_out_(final_norm_(h)), nn::mul(skip_(time), x));
}

template <typename T>
nn::ParamList<T> VelocityNet<T>::parameters() const {
    nn::ParamList<T> out;
    patch_in_.collect("flow.patch_in", out);
    out.push_back({"flow.position", position_});
    time_proj_.collect("flow.time", out);
    style_proj_.collect("flow.style", out);
    out.push_back({"flow.style_position", style_position_});
    out.push_back({"flow.caption_embed", caption_embed_});
    out.push_back({"flow.caption_position", caption_position_});
    cond_norm_.collect("flow.cond_norm", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "flow.block" + std::to_string(i);
        blocks_[i].ln1.collect(p + ".ln1", out);
        blocks_[i].self_attn.collect(p + ".self", out);
        blocks_[i].ln2.collect(p + ".ln2", out);
        blocks_[i].cross_attn.collect(p + ".cross", out);
        blocks_[i].ln3.collect(p + ".ln3", out);
        blocks_[i].ff.collect(p + ".ff", out);
    }
    final_norm_.collect("flow.final_norm", out);
    patch_out_.collect("flow.patch_out", out);
    skip_.collect("flow.skip", out);
    return out;
}

template <typename T>
FlowBatch<T> make_flow_batch(std::span<const double> data, std::span<const double> noise, std::vector<double> t,
                             std::size_t tokens, std::size_t patch_dim) {
    const std::size_t per = tokens * patch_dim, b = t.size();
    if (data.size() != b * per || noise.size() != b * per) throw nn::ShapeError("flow batch size mismatch");
    std::vector<T> xt(b * per), target(b * per);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < per; ++j) {
            const double x = data[i * per + j], e = noise[i * per + j];
            xt[i * per + j] = static_cast<T>((1.0 - t[i]) * x + t[i] * e);
            target[i * per + j] = static_cast<T>(e - x);
        }
    return {Tensor<T>::from_data({b, tokens, patch_dim}, std::move(xt)),
            Tensor<T>::from_data({b, tokens, patch_dim}, std::move(target)), std::move(t)};
}

template <typename T>
Tensor<T> flow_matching_loss(const Tensor<T>& velocity, const FlowBatch<T>& batch) {
    return nn::mse(velocity, batch.target);
}

template class VelocityNet<float>;
template class VelocityNet<double>;
template FlowBatch<float> make_flow_batch(std::span<const double>, std::span<const double>, std::vector<double>,
                                          std::size_t, std::size_t);
template FlowBatch<double> make_flow_batch(std::span<const double>, std::span<const double>, std::vector<double>,
                                           std::size_t, std::size_t);
template Tensor<float> flow_matching_loss(const Tensor<float>&, const FlowBatch<float>&);
template Tensor<double> flow_matching_loss(const Tensor<double>&, const FlowBatch<double>&);

FlowTrainer::FlowTrainer(VelocityNet<float>& net, const world::Dataset& dataset, std::vector<std::vector<float>> styles)
    : net_(net),
      dataset_(dataset),
      styles_(std::move(styles)),
      sampler_(dataset, world::Split::train),
      adam_(net.parameters(), [&] {
          nn::AdamOptions o;
          o.learning_rate = net.config().learning_rate;
          return o;
      }()) {
    if (styles_.size() != dataset.images.size()) throw std::invalid_argument("style embeddings do not cover the dataset");
    for (const auto& img : dataset.images) patches_.push_back(to_patches(img, net.config().patch));
}

double FlowTrainer::step(CounterRng& rng) {
    std::vector<FlowPair> pairs;
    for (int i = 0; i < net_.config().batch; ++i) {
        const auto p = sampler_.sample(rng, true);
        pairs.push_back({p.first, p.second});
    }
    return step_on(pairs, rng);
}

double FlowTrainer::step_on(const std::vector<FlowPair>& pairs, CounterRng& rng) {
    const std::size_t per = net_.tokens() * net_.patch_dim();
    std::vector<Condition> conds;
    std::vector<double> data, noise, t;
    for (const auto& p : pairs) {
        const auto& a = dataset_.manifest.records.at(p.style_source);
        const auto& b = dataset_.manifest.records.at(p.target);
        if (a.style_id != b.style_id) throw std::invalid_argument("flow training pair mixes styles");
        if (p.style_source == p.target) throw std::invalid_argument("flow training pair reuses the style image as target");
        conds.push_back({styles_[p.style_source], b.caption_tokens});
        data.insert(data.end(), patches_[p.target].begin(), patches_[p.target].end());
        t.push_back(rng.uniform());
        for (std::size_t j = 0; j < per; ++j) noise.push_back(rng.normal());
    }
    std::vector<const Condition*> cond_ptrs;
    for (const auto& c : conds) cond_ptrs.push_back(&c);
    const auto batch = make_flow_batch<float>(data, noise, t, net_.tokens(), net_.patch_dim());
    const auto loss = flow_matching_loss(net_(batch.x_t, batch.t, cond_ptrs), batch);
    const double value = loss.item();
    nn::backward(loss);
    adam_.step();
    last_pairs_ = pairs;
    return value;
}

std::vector<std::vector<double>> integrate(const VelocityNet<float>& net, std::vector<std::vector<double>> x,
                                           const std::vector<const Condition*>& cond, int steps) {
    if (steps < 1) throw std::invalid_argument("flow sampling needs at least one step");
    const std::size_t b = x.size(), per = net.tokens() * net.patch_dim();
    nn::NoGradGuard guard;
    const double dt = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        const double t = 1.0 - s * dt;
        std::vector<float> flat;
        flat.reserve(b * per);
        for (const auto& img : x) {
            if (img.size() != per) throw nn::ShapeError("noise has the wrong size");
            for (auto v : img) flat.push_back(static_cast<float>(v));
        }
        const std::vector<double> times(b, t);
        const auto v = net(Tensor<float>::from_data({b, net.tokens(), net.patch_dim()}, std::move(flat)), times, cond);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < per; ++j) x[i][j] -= dt * static_cast<double>(v.data()[i * per + j]);
    }
    for (auto& img : x)
        for (auto& v : img) v = std::clamp(v, -1.0, 1.0);
    return x;
}

std::vector<double> draw_noise(const VelocityNet<float>& net, CounterRng& rng) {
    std::vector<double> out(net.tokens() * net.patch_dim());
    for (auto& v : out) v = rng.normal();
    return out;
}

std::vector<Image> generate(const VelocityNet<float>& net, const std::vector<Condition>& cond,
                            const std::vector<std::vector<double>>& noise, int steps) {
    if (cond.size() != noise.size()) throw std::invalid_argument("one noise draw per condition is required");
    std::vector<const Condition*> ptrs;
    for (const auto& c : cond) ptrs.push_back(&c);
    std::vector<Image> out;
    for (const auto& x : integrate(net, noise, ptrs, steps))
        out.push_back(from_patches(x, net.config().image_size, net.config().patch));
    return out;
}

std::vector<nn::TensorRecord> flow_records(const VelocityNet<float>& net) { return nn::to_records(net.parameters()); }

void load_flow(VelocityNet<float>& net, const std::vector<nn::TensorRecord>& records) {
    nn::assign_records(records, net.parameters());
}

} // namespace stylecode::flow
