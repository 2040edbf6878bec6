#pragma once

// Shared fixtures for the unit tests: a small on-disk corpus generated once
// per process, and a scratch directory.

#include "sadcoeff/io.hpp"
#include "sadcoeff/synthdata.hpp"

#include <filesystem>
#include <string>

#include <unistd.h>

namespace sadcoeff {

inline std::filesystem::path unit_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / ("sadcoeff_unit_" + std::to_string(::getpid())) / name;
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

// Two styles, two 40-frame clips each, tiny networks.
inline RunConfig tiny_config() {
    RunConfig c;
    c.seed = 5;
    c.num_styles = 2;
    c.clips_per_style = 2;
    c.frames_per_clip = 40;
    c.expnet_widths = {2, 2, 4, 4};
    c.expnet_batch = 2;
    c.posevae_widths = {2, 2, 2, 2};
    c.posevae_batch = 2;
    c.latent_dim = 4;
    c.hidden_dim = 8;
    c.mapper_channels = 8;
    c.mapper_batch = 4;
    return c;
}

inline const Corpus& tiny_corpus() {
    static const Corpus corpus = [] {
        const auto dir = unit_dir("corpus");
        write_corpus(tiny_config(), dir);
        return load_corpus(dir);
    }();
    return corpus;
}

}  // namespace sadcoeff
