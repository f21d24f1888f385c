#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dualtsr/model.hpp"

namespace dualtsr::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

// Self-describing archive: magic, version, JSON header (model config, tensor
// directory, training step), then contiguous little-endian float32 payloads.
// Holds both the raw and the EMA parameters plus optimizer moments so a run
// can resume.
struct Checkpoint {
    model::ModelConfig config;
    std::int64_t step = 0;
    model::ModelParams<float> params;
    model::ModelParams<float> ema_params;
    // AdamW first/second moments, in registry order; empty when absent.
    std::vector<std::vector<float>> adam_m;
    std::vector<std::vector<float>> adam_v;
};

void save(const Checkpoint& ckpt, const std::string& path);

Checkpoint load(const std::string& path);

// Loads and verifies against an expected config; throws on mismatch.
Checkpoint load_checked(const std::string& path,
                        const model::ModelConfig& expected);

}  // namespace dualtsr::checkpoint
