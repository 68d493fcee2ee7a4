#pragma once

#include <filesystem>
#include <string>

#include "service/bundle.hpp"

namespace testing_support {

inline stylecode::service::RunConfig tiny_config(const std::string& dir) {
    stylecode::service::RunConfig c;
    c.styles = 6;
    c.contents = 12;
    c.codewords = 16;
    c.codebook_steps = 40;
    c.ar_width = 32;
    c.ar_blocks = 1;
    c.ar_heads = 2;
    c.ar_steps = 40;
    c.flow_width = 32;
    c.flow_blocks = 1;
    c.flow_heads = 2;
    c.flow_steps = 20;
    c.sample_steps = 4;
    c.data_dir = dir + "/data";
    c.bundle = dir + "/bundle.ctyl";
    return c;
}

inline std::string scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("ctyl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

struct TinyWorld {
    std::string dir;
    stylecode::service::RunConfig config;
    stylecode::world::Dataset dataset;
    stylecode::service::Bundle bundle;
};

// A fully trained (briefly) bundle shared by every test case in a binary.
inline const TinyWorld& tiny_world(const std::string& name) {
    static const TinyWorld world = [&] {
        namespace svc = stylecode::service;
        TinyWorld w;
        w.dir = scratch_dir(name);
        w.config = tiny_config(w.dir);
        w.dataset = svc::generate_dataset(w.config, w.config.data_dir);
        w.bundle = svc::make_bundle(w.config);
        svc::train_codebook(w.bundle, w.dataset, w.config.codebook_steps);
        svc::train_generator(w.bundle, w.dataset, w.config.ar_steps);
        svc::compute_frequencies(w.bundle, w.dataset);
        svc::train_flow(w.bundle, w.dataset, w.config.flow_steps);
        return w;
    }();
    return world;
}

} // namespace testing_support
