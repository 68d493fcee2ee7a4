#include "service/bundle.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

namespace stylecode::service {

namespace {

constexpr std::pair<std::uint32_t, const char*> kStageNames[] = {
    {kStageExtractor, "extractor"},     {kStageCodebook, "codebook"}, {kStageGenerator, "generator"},
    {kStageFrequencies, "frequencies"}, {kStageFlow, "flow"},
};

void report(const Progress& progress, const std::string& stage, int step, int total, double loss) {
    if (progress) progress(stage, step, total, loss);
}

} // namespace

std::string stage_names(std::uint32_t stages) {
    std::string out;
    for (const auto& [flag, name] : kStageNames)
        if (stages & flag) out += (out.empty() ? "" : ",") + std::string(name);
    return out.empty() ? "none" : out;
}

void Bundle::require(std::uint32_t wanted) const {
    for (const auto& [flag, name] : kStageNames)
        if ((wanted & flag) && !(stages & flag))
            throw pipeline::MissingStage(std::string("checkpoint has no trained ") + name + " stage");
}

Bundle make_bundle(const RunConfig& config) {
    validate(config);
    Bundle b;
    b.config = config;
    b.models.extractor.emplace(extractor_config(config));
    b.stages = kStageExtractor;
    return b;
}

std::vector<nn::TensorRecord> bundle_records(const Bundle& bundle) {
    std::vector<nn::TensorRecord> out{nn::u64_record("bundle.stages", {bundle.stages}),
                                      nn::u64_record("bundle.config_hash", {model_hash(bundle.config)})};
    auto append = [&](std::vector<nn::TensorRecord> rs) { out.insert(out.end(), rs.begin(), rs.end()); };
    const auto& m = bundle.models;
    if (bundle.has(kStageExtractor)) append(m.require_extractor().records());
    if (bundle.has(kStageCodebook)) append(m.require_codebook().records());
    if (bundle.has(kStageGenerator)) append(m.require_ar().records());
    if (bundle.has(kStageFrequencies)) {
        append(generator::frequency_records(m.require_frequencies()));
        out.push_back(nn::u64_record("freq.suppression", {std::bit_cast<std::uint64_t>(m.suppression.tau),
                                                          std::bit_cast<std::uint64_t>(m.suppression.k)}));
    }
    if (bundle.has(kStageFlow)) append(flow::flow_records(m.require_flow()));
    return out;
}

Bundle bundle_from_records(const std::vector<nn::TensorRecord>& records, const RunConfig& config) {
    validate(config);
    const auto stages = nn::record_u64(nn::require_record(records, "bundle.stages")).at(0);
    const auto hash = nn::record_u64(nn::require_record(records, "bundle.config_hash")).at(0);
    if (hash != model_hash(config))
        throw IncompatibleCheckpoint("checkpoint was built with an incompatible config (model hash differs)");
    if (stages & ~std::uint64_t{kAllStages}) throw nn::FormatError("checkpoint has unknown stage flags");
    Bundle b;
    b.config = config;
    b.stages = static_cast<std::uint32_t>(stages);
    auto& m = b.models;
    if (b.has(kStageExtractor)) m.extractor.emplace(FeatureExtractor::from_records(records));
    if (b.has(kStageCodebook)) {
        m.codebook.emplace(codebook_config(config));
        m.codebook->load(records);
        m.codebook->mark_trained();
    }
    if (b.has(kStageGenerator)) {
        m.ar.emplace(ar_config(config));
        m.ar->load(records);
    }
    if (b.has(kStageFrequencies)) {
        m.frequencies = generator::frequency_from_records(records);
        if (m.frequencies->f.size() != static_cast<std::size_t>(config.codewords))
            throw IncompatibleCheckpoint("frequency table size differs from the codebook size");
        const auto s = nn::record_u64(nn::require_record(records, "freq.suppression"));
        m.suppression = {std::bit_cast<double>(s.at(0)), std::bit_cast<double>(s.at(1))};
        generator::validate(m.suppression);
    }
    if (b.has(kStageFlow)) {
        m.flow.emplace(flow_config(config));
        flow::load_flow(*m.flow, records);
    }
    return b;
}

void save_bundle(const Bundle& bundle, const std::string& path) {
    nn::save_checkpoint(path, bundle_records(bundle));
    save_config(bundle.config, path + ".json");
}

Bundle load_bundle(const std::string& path) {
    if (!std::filesystem::exists(path)) throw std::runtime_error("cannot open checkpoint " + path);
    const std::string sidecar = path + ".json";
    if (!std::filesystem::exists(sidecar)) throw std::runtime_error("cannot open sidecar config " + sidecar);
    return load_bundle(path, load_config(sidecar));
}

Bundle load_bundle(const std::string& path, const RunConfig& config) {
    return bundle_from_records(nn::load_checkpoint(path), config);
}

// ---- training stages ------------------------------------------------------

world::Dataset generate_dataset(const RunConfig& config, const std::string& dir) {
    validate(config);
    auto ds = world::build_dataset(dataset_config(config));
    world::write_dataset(ds, dir);
    return ds;
}

world::Dataset open_dataset(const RunConfig& config, const std::string& dir) {
    auto ds = world::load_dataset(dir);
    if (ds.config.size != config.image_size)
        throw std::invalid_argument("dataset image size " + std::to_string(ds.config.size) +
                                    " does not match the config (" + std::to_string(config.image_size) + ")");
    return ds;
}

void train_codebook(Bundle& bundle, const world::Dataset& dataset, int steps, const Progress& progress) {
    bundle.require(kStageExtractor);
    const auto features = codebook::extract_all(*bundle.models.extractor, dataset);
    codebook::Codebook cb(codebook_config(bundle.config));
    codebook::CodebookTrainer trainer(cb, dataset, features);
    CounterRng rng(bundle.config.codebook_seed, 1);
    trainer.init_codewords(rng);
    for (int s = 0; s < steps; ++s) report(progress, "codebook", s + 1, steps, trainer.step(rng).total);
    cb.mark_trained();
    bundle.models.codebook = std::move(cb);
    bundle.models.ar.reset();
    bundle.models.frequencies.reset();
    bundle.models.flow.reset();
    bundle.stages = kStageExtractor | kStageCodebook;
}

std::vector<generator::Sequence> style_corpus(const Bundle& bundle, const world::Dataset& dataset, world::Split split) {
    bundle.require(kStageExtractor | kStageCodebook);
    const auto& fx = *bundle.models.extractor;
    std::vector<generator::Sequence> out;
    for (auto i : dataset.indices(split))
        out.push_back(bundle.models.codebook->encode(normalize_tokens(fx.extract(dataset.images[i]))));
    return out;
}

void train_generator(Bundle& bundle, const world::Dataset& dataset, int steps, const Progress& progress) {
    generator::ARModel model(ar_config(bundle.config));
    generator::ARTrainer trainer(model, style_corpus(bundle, dataset, world::Split::train));
    CounterRng rng(bundle.config.ar_seed, 1);
    for (int s = 0; s < steps; ++s) report(progress, "generator", s + 1, steps, trainer.step(rng));
    bundle.models.ar = std::move(model);
    bundle.stages |= kStageGenerator;
}

void compute_frequencies(Bundle& bundle, const world::Dataset& dataset) {
    auto table = generator::count_frequencies(style_corpus(bundle, dataset, world::Split::train),
                                              static_cast<std::size_t>(bundle.config.codewords));
    auto supp = generator::suppression_from_percentile(table, bundle.config.tau_percentile);
    if (bundle.config.suppression_k > 0) supp.k = bundle.config.suppression_k;
    bundle.models.frequencies = std::move(table);
    bundle.models.suppression = supp;
    bundle.stages |= kStageFrequencies;
}

void train_flow(Bundle& bundle, const world::Dataset& dataset, int steps, const Progress& progress) {
    bundle.require(kStageExtractor | kStageCodebook);
    const auto& cb = *bundle.models.codebook;
    std::vector<std::vector<float>> styles;
    for (const auto& f : codebook::extract_all(*bundle.models.extractor, dataset))
        styles.push_back(cb.decode(cb.encode(f)).values);
    flow::VelocityNet<float> net(flow_config(bundle.config));
    flow::FlowTrainer trainer(net, dataset, std::move(styles));
    CounterRng rng(bundle.config.flow_seed, 1);
    for (int s = 0; s < steps; ++s) report(progress, "flow", s + 1, steps, trainer.step(rng));
    bundle.models.flow = std::move(net);
    bundle.stages |= kStageFlow;
}

} // namespace stylecode::service
