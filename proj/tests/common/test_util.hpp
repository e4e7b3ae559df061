#pragma once

#include "vpgo/model.hpp"

#include <filesystem>
#include <string>

namespace vpgo::test {

// Small enough to run in milliseconds on a CPU.
inline model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.feature_stride = 16;
    c.base_channels = 4;
    c.feature_channels = 8;
    c.hidden_channels = 8;
    c.latent_channels = 2;
    return c;
}

// 8x8 frames on a 1x1 feature grid, for finite-difference checks in double.
inline model::ModelConfig micro_config() {
    model::ModelConfig c;
    c.frame_height = 8;
    c.frame_width = 8;
    c.feature_stride = 8;
    c.base_channels = 2;
    c.feature_channels = 4;
    c.hidden_channels = 4;
    c.latent_channels = 1;
    c.action_code_channels = 1;
    return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("vpgo_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace vpgo::test
