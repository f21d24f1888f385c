#pragma once

#include <string>
#include <vector>

#include "dualtsr/checkpoint.hpp"
#include "dualtsr/image.hpp"
#include "dualtsr/model.hpp"
#include "dualtsr/rng.hpp"
#include "dualtsr/sampler.hpp"
#include "dualtsr/schedule.hpp"
#include "dualtsr/text.hpp"

namespace dualtsr::trainer {

struct GuidanceConfig {
    double w = 1.0;     // model-guidance scale
    double psi = 0.1;   // condition dropout probability
    double ema_decay = 0.999;
    double delta = schedule::kDefaultDelta;
    int K = 8;          // stratified timesteps for the text loss
};

struct Hyper {
    double lr = 1e-4;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    int warmup_steps = 500;
    int total_steps = 20000;
};

struct TrainTriple {
    ImageGrid hr;
    ImageGrid lr;
    textdiff::TokenSequence text;  // no MASK ids
};

struct LossParts {
    double img = 0.0;
    double txt = 0.0;
    double joint = 0.0;
    double total() const { return img + txt + joint; }
};

// Gradient-free loss evaluations over abstract denoisers; the student and
// teacher may be oracles. Used by the trainer contract tests; the optional
// forced_t pins the per-item timestep instead of sampling it.
double loss_img_mg(const sampler::ModelFn& student,
                   const sampler::ModelFn& teacher,
                   const std::vector<TrainTriple>& batch,
                   const GuidanceConfig& cfg, Rng& rng,
                   const double* forced_t = nullptr);

double loss_txt(const sampler::ModelFn& student,
                const std::vector<TrainTriple>& batch, int K, double delta,
                Rng& rng, const double* forced_u = nullptr);

double loss_joint_mg(const sampler::ModelFn& student,
                     const sampler::ModelFn& teacher,
                     const std::vector<TrainTriple>& batch,
                     const GuidanceConfig& cfg, Rng& rng,
                     const double* forced_t = nullptr);

// Owns the student, the EMA teacher, and the optimizer state; one logical
// training thread drives train_step.
class Trainer {
public:
    Trainer(const model::ModelConfig& mc, const GuidanceConfig& gc,
            const Hyper& hy, std::uint64_t seed);

    // Random init; EMA starts as a copy of the student.
    void init();
    void restore(const checkpoint::Checkpoint& ckpt);
    checkpoint::Checkpoint to_checkpoint() const;

    // One optimization step over the batch: three losses summed unweighted,
    // global-norm clip, decoupled-weight-decay Adam with warmup + cosine
    // decay, then the EMA update. Throws on non-finite loss.
    LossParts train_step(const std::vector<TrainTriple>& batch);

    const model::Model<float>& student() const { return student_; }
    const model::Model<float>& teacher() const { return teacher_; }
    model::Model<float>& student() { return student_; }
    model::Model<float>& teacher() { return teacher_; }
    int step() const { return step_; }
    double current_lr() const;  // schedule value for the upcoming step
    const GuidanceConfig& guidance() const { return gc_; }
    const Hyper& hyper() const { return hy_; }

private:
    model::ModelConfig mc_;
    GuidanceConfig gc_;
    Hyper hy_;
    model::Model<float> student_;
    model::Model<float> teacher_;
    model::ModelParams<float> adam_m_;
    model::ModelParams<float> adam_v_;
    Rng rng_;
    std::uint64_t seed_;
    int step_ = 0;
};

}  // namespace dualtsr::trainer
