#pragma once

#include <functional>
#include <vector>

#include "dualtsr/rng.hpp"
#include "dualtsr/schedule.hpp"

namespace dualtsr::textdiff {

// Fixed-length token sequence over vocabulary {0..N-1} plus the absorbing
// MASK id N. PAD is an ordinary vocabulary token (id N-1); clean training
// text never contains MASK.
struct TokenSequence {
    std::vector<int> ids;
    int vocab = 0;  // N: number of real tokens (PAD included, MASK excluded)

    int mask_id() const { return vocab; }
    int length() const { return static_cast<int>(ids.size()); }

    static TokenSequence all_mask(int length, int vocab);
    bool has_mask() const;
    void validate() const;  // every id in [0, N]
};

// Per-position denoising distribution over the N real tokens; MASK gets no
// column (the model never predicts it).
struct TextPosterior {
    int length = 0;
    int vocab = 0;
    std::vector<float> probs;  // length x vocab, row-major

    float* row(int pos) { return probs.data() + static_cast<std::size_t>(pos) * vocab; }
    const float* row(int pos) const {
        return probs.data() + static_cast<std::size_t>(pos) * vocab;
    }
    void validate() const;  // rows sum to 1 within 1e-5
};

using PosteriorFn =
    std::function<TextPosterior(const TokenSequence& corrupted, double t)>;

// Absorbing forward corruption: each position independently keeps its token
// with probability alpha(t), else becomes MASK.
TokenSequence forward_mask(const TokenSequence& x, double t,
                           const schedule::NoiseSchedule& sched, Rng& rng);

// Masked cross-entropy of the clean tokens under the posterior, averaged
// over masked positions, weighted by the NELBO weight, then averaged over
// the K stratified timesteps. Timesteps with no masked position contribute
// zero.
double text_nelbo_loss(const PosteriorFn& posterior_fn, const TokenSequence& x,
                       const schedule::TimestepBatch& timesteps,
                       const schedule::NoiseSchedule& sched, Rng& rng);

// Mean cross-entropy over masked positions of one corrupted sequence (the
// unweighted building block shared with the joint loss). Returns 0 when no
// position is masked.
double masked_cross_entropy(const TextPosterior& posterior,
                            const TokenSequence& clean,
                            const TokenSequence& corrupted);

// Reverse absorbing transition from t to s < t. Masked positions unmask with
// probability (alpha(s) - alpha(t)) / (1 - alpha(t) + eps) to a categorical
// sample from the posterior row; revealed tokens are untouched.
TokenSequence reverse_text_step(const TokenSequence& x_t,
                                const TextPosterior& posterior, double t,
                                double s, const schedule::NoiseSchedule& sched,
                                Rng& rng);

inline constexpr double kUnmaskEps = 1e-8;

}  // namespace dualtsr::textdiff
