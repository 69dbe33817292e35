#pragma once

#include <filesystem>
#include <string>

#include "vlpose/vlpose.hpp"

namespace vlpose::testing {

/// A small model that still exercises every module: 32x32 input, 2x2 token grid.
inline ModelConfig tiny_model(std::size_t prompts = 2, const std::string& decoder = "First-AMiddle-Final",
                              MatcherVariant matcher = MatcherVariant::E_T) {
    ModelConfig mc;
    mc.encoder.input_h = 32;
    mc.encoder.input_w = 32;
    mc.encoder.channels = 8;
    mc.encoder.depth = 2;
    mc.encoder.heads = 2;
    mc.encoder.mlp_ratio = 2;
    mc.encoder.prompt_tokens = prompts;
    mc.matcher = matcher;
    mc.matcher_heads = 2;
    mc.text_len = 4;
    mc.text_dim = 6;
    mc.decoder = decoder;
    return mc;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("vlpose_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

}  // namespace vlpose::testing
