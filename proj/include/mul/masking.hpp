#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mul/common.hpp"

namespace mul {

struct MaskConfig {
    double p = 0.08;  // fraction of timesteps selected as span starts
    int l = 10;       // span length in frames
};

/// The masked index set together with the parameters that generated it.
/// masked is sorted and duplicate-free; it is exactly the union of
/// [s, min(s+l, T)) over the sampled starts.
struct MaskSpec {
    std::vector<int> masked;
    int T = 0;
    double p = 0.0;
    int l = 0;

    bool is_masked(int t) const;  // binary search
};

/// Samples exactly round(p*T) distinct start indices uniformly without
/// replacement; spans clip at the sequence end and overlaps merge.
/// Deterministic given the seed.
MaskSpec sample_mask(int T, const MaskConfig& cfg, uint64_t seed);

/// Replace rows at masked indices with the mask embedding; all other rows
/// are bit-identical to the input.
FeatureSequence corrupt(const FeatureSequence& f, const MaskSpec& m,
                        std::span<const float> mask_embedding);

}  // namespace mul
