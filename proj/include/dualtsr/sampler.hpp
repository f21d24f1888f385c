#pragma once

#include <functional>
#include <string>
#include <utility>

#include "dualtsr/image.hpp"
#include "dualtsr/model.hpp"
#include "dualtsr/rng.hpp"
#include "dualtsr/schedule.hpp"
#include "dualtsr/text.hpp"

namespace dualtsr::sampler {

// Joint inference state: image interpolant + partially masked tokens at time t.
struct SamplerState {
    ImageGrid x_img;
    textdiff::TokenSequence x_txt;
    double t = 1.0;
};

// One denoiser evaluation: predicted velocity plus per-position posterior
// (softmax over the real-token logits).
struct ModelEval {
    ImageGrid velocity;
    textdiff::TextPosterior posterior;
};

// Abstract denoiser so oracles can stand in for the transformer in tests.
// `lr` may be null (unconditional branch).
using ModelFn = std::function<ModelEval(
    const ImageGrid& x_img, double t_img, const textdiff::TokenSequence& x_txt,
    double t_txt, const ImageGrid* lr)>;

// Optional per-step observer, called after each transition with the step
// index (0-based) and the new state.
using TrajectoryHook = std::function<void(int step, const SamplerState&)>;

// Pure-noise image + fully masked text at t = 1.
SamplerState init_state(int img_h, int img_w, int channels, int seq_len,
                        int vocab, Rng& rng);

// One synchronized transition t -> s (s < t). A single model call when w = 1;
// w != 1 adds an unconditional call and applies the guidance combination to
// the velocity only. When s reaches 0 any position still MASK is forced to
// its posterior argmax.
SamplerState joint_step(const SamplerState& state, const ModelFn& model,
                        const ImageGrid* lr, double t, double s, double w,
                        Rng& rng, int step_index = -1);

// Full run over the uniform partition of [1, 0] with `steps` transitions.
// The returned image is clamped to [-1, 1].
std::pair<ImageGrid, textdiff::TokenSequence> sample(
    const ModelFn& model, const ImageGrid* lr, int img_h, int img_w,
    int channels, int seq_len, int vocab, int steps, double w,
    std::uint64_t seed, const TrajectoryHook& hook = nullptr);

// Wraps the shared transformer (typically loaded with EMA weights) as a
// ModelFn and runs `sample` with dimensions taken from its config.
std::pair<ImageGrid, textdiff::TokenSequence> sample_with_model(
    const model::Model<float>& m, const ImageGrid& lr, int steps, double w,
    std::uint64_t seed, const TrajectoryHook& hook = nullptr);

ModelFn make_model_fn(const model::Model<float>& m);

}  // namespace dualtsr::sampler
