#pragma once

#include <cstdint>
#include <string>

#include "dualtsr/model.hpp"
#include "dualtsr/synthdata.hpp"
#include "dualtsr/trainer.hpp"

namespace dualtsr::config {

// Flat key=value run configuration spanning all module configs. Unknown keys
// are rejected; serialization round-trips exactly (doubles at full
// precision) and uses a stable key order.
struct RunConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";

    // model.*
    int model_image_h = 32;
    int model_image_w = 128;
    int model_patch = 4;
    int model_channels = 3;
    int model_scale = 4;
    int model_embed_dim = 256;
    int model_depth = 6;
    int model_heads = 4;
    int model_vocab = 27;
    int model_seq_len = 24;

    // train.*
    int train_batch = 32;
    int train_steps = 20000;
    int train_warmup = 500;
    double train_lr = 1e-4;
    double train_weight_decay = 0.05;
    double train_clip_norm = 1.0;
    int train_checkpoint_every = 1000;
    int train_log_every = 10;

    // guidance.*
    double guidance_w = 1.0;
    double guidance_psi = 0.1;
    double guidance_ema_decay = 0.999;

    double schedule_delta = 1e-3;
    int text_K = 8;

    // data.*
    int data_count = 1000;
    double data_test_fraction = 0.1;
    std::string data_dir = "";  // empty: train on the fly from the specs
    int data_text_len_min = 4;
    int data_text_len_max = 4;
    int data_jitter = 1;
    double data_blur_lo = 0.2;
    double data_blur_hi = 2.0;
    double data_noise_lo = 0.0;
    double data_noise_hi = 0.05;
    double data_quality_lo = 0.5;
    double data_quality_hi = 1.0;

    // sample.*
    int sample_steps = 4;
    double sample_w = 1.0;

    model::ModelConfig model_config() const;
    trainer::GuidanceConfig guidance_config() const;
    trainer::Hyper hyper() const;
    synthdata::RenderSpec render_spec() const;
    synthdata::DegradeSpec degrade_spec() const;
};

// Set a single "section.key=value" entry; throws on unknown key or bad value.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Parse a file of key=value lines ('#' comments and blank lines allowed)
// on top of the given defaults.
RunConfig parse_file(const std::string& path, RunConfig base = RunConfig{});

// Stable-order serialization; parse(serialize(c)) == c.
std::string serialize(const RunConfig& cfg);
void write_file(const RunConfig& cfg, const std::string& path);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace dualtsr::config
