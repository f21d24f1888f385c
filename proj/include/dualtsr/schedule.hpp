#pragma once

#include <functional>
#include <vector>

#include "dualtsr/rng.hpp"

namespace dualtsr::schedule {

// Noise schedule alpha(t) on [0,1] with alpha(0)=1, alpha(1)=0, plus its
// derivative. Pluggable; only the log-linear schedule ships.
struct NoiseSchedule {
    std::function<double(double)> alpha;
    std::function<double(double)> alpha_prime;
};

inline constexpr double kDefaultDelta = 1e-3;

// alpha(t) = 1 - t.
double log_linear_alpha(double t);

NoiseSchedule log_linear_schedule();

// NELBO integrand weight -alpha'(t) / (1 - alpha(t)); 1/t for log-linear.
// Throws below the stability floor where the weight is unbounded.
double nelbo_weight(const NoiseSchedule& sched, double t,
                    double delta = kDefaultDelta);

// One timestep per stratum of (delta, 1], all offset by a single shared
// uniform draw u: t_i = delta + (1-delta) * (i + u) / K.
struct TimestepBatch {
    std::vector<double> values;
    double delta = kDefaultDelta;
};

TimestepBatch stratified_timesteps(int k, double delta, double u);

// Convenience overload drawing the shared offset from the rng.
TimestepBatch stratified_timesteps(int k, double delta, Rng& rng);

}  // namespace dualtsr::schedule
