#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mul {

/// Derive an independent seed from a root seed and a tag. Used to give every
/// stage / utterance / trial its own stream without coupling draw counts.
uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a = 0, uint64_t b = 0);

/// Deterministic random source. mt19937_64 is fully specified by the
/// standard, and all sampling transforms are implemented here rather than
/// via std::*_distribution (whose output is implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n), unbiased (rejection sampling). n >= 1.
    int64_t uniform_int(int64_t n);

    /// Standard normal via Box-Muller (no cached second value).
    double gaussian();

private:
    std::mt19937_64 gen_;
};

}  // namespace mul
