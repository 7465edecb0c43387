// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "gaussforge/common.hpp"

namespace gf {

// xoshiro256++ with splitmix64 state expansion. Every random draw in the
// project flows through this generator; library code never touches
// std::random_device or the global C RNG. Substreams are derived from a
// root seed plus a label so independent pipeline stages can rewind and
// replay without coupling their draw counts.
class Rng {
public:
    explicit Rng(uint64_t seed) : root_mix_(seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = SplitMix64(sm);
    }

    static uint64_t SplitMix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ull;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static uint64_t HashLabel(std::string_view label) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    // Child generator for the given label; optional index distinguishes
    // repeated uses (per view, per trial, ...).
    Rng Substream(std::string_view label, uint64_t index = 0) const {
        uint64_t mix = root_mix_ ^ HashLabel(label);
        uint64_t sm = mix + 0x632be59bd9b4e019ull * (index + 1);
        return Rng(SplitMix64(sm));
    }

    uint64_t NextU64() {
        const uint64_t result = Rotl(state_[0] + state_[3], 23) + state_[0];
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = Rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

    double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

    // Uniform integer in [0, n).
    uint64_t NextBelow(uint64_t n) {
        Require(n > 0, "NextBelow needs n > 0");
        // Rejection keeps the distribution exact and stays deterministic for
        // a fixed draw sequence.
        const uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = NextU64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller; the spare is cached.
    double Normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = Uniform();
        while (u1 <= 0.0) u1 = Uniform();
        const double u2 = Uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * kPi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double Normal(double mean, double stddev) { return mean + stddev * Normal(); }

private:
    static uint64_t Rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4] = {};
    uint64_t root_mix_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace gf
