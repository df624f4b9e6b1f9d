#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace matchgan {

/// Explicit random-state handle. Every stochastic operation in the library
/// takes one of these instead of touching global state, so independent
/// streams can be handed to parallel samplers.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    std::uint64_t next_u64() { return engine_(); }

    // Derives an independent stream; the parent advances by one draw.
    Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace matchgan
