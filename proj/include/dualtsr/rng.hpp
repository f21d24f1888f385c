#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>

namespace dualtsr {

// Counter-free splitmix64 stream. All randomness in the project flows from
// one root seed through named substreams, so any component can be replayed
// in isolation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return mix64(state_ += 0x9e3779b97f4a7c15ULL); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; second draw cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // Inverse-CDF categorical sample over a probability row.
    template <typename T>
    int categorical(std::span<const T> probs) {
        const double u = uniform();
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += static_cast<double>(probs[i]);
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;  // rounding slack
    }

    // Derive an independent stream from a label; deterministic in (state, name).
    Rng substream(std::string_view name) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char ch : name) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(ch));
            h *= 0x100000001b3ULL;
        }
        return mixed(h);
    }

    Rng substream(std::uint64_t index) const {
        return mixed(0x9e3779b97f4a7c15ULL ^ (index + 1));
    }

private:
    // Avalanche-mix the salted state so nested substreams never collide:
    // without full diffusion, XOR/add chains over small indices alias badly
    // (substream(a).substream(b) would coincide for many index pairs).
    Rng mixed(std::uint64_t salt) const { return Rng(mix64(state_ ^ salt)); }

    static std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace dualtsr
