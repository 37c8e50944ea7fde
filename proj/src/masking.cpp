#include "mul/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mul/rng.hpp"

namespace mul {

bool MaskSpec::is_masked(int t) const {
    return std::binary_search(masked.begin(), masked.end(), t);
}

MaskSpec sample_mask(int T, const MaskConfig& cfg, uint64_t seed) {
    if (T < 1) throw std::runtime_error("sequence length must be >= 1");
    if (cfg.p < 0.0 || cfg.p > 1.0)
        throw std::runtime_error("mask start fraction must be in [0, 1]");
    if (cfg.l < 1) throw std::runtime_error("mask span length must be >= 1");

    MaskSpec spec;
    spec.T = T;
    spec.p = cfg.p;
    spec.l = cfg.l;

    const int n_starts = static_cast<int>(std::llround(cfg.p * T));  // round half up
    if (n_starts == 0) return spec;

    // partial Fisher-Yates: first n_starts entries are a uniform sample
    // without replacement
    std::vector<int> idx(T);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (int i = 0; i < n_starts; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(T - i));
        std::swap(idx[i], idx[j]);
    }

    std::vector<uint8_t> covered(T, 0);
    for (int i = 0; i < n_starts; ++i) {
        const int s = idx[i];
        const int e = std::min(s + cfg.l, T);
        std::fill(covered.begin() + s, covered.begin() + e, uint8_t{1});
    }
    for (int t = 0; t < T; ++t)
        if (covered[t]) spec.masked.push_back(t);
    return spec;
}

FeatureSequence corrupt(const FeatureSequence& f, const MaskSpec& m,
                        std::span<const float> mask_embedding) {
    if (m.T != f.rows)
        throw std::runtime_error("mask length " + std::to_string(m.T) +
                                 " does not match sequence length " + std::to_string(f.rows));
    if (static_cast<int>(mask_embedding.size()) != f.dim)
        throw std::runtime_error("mask embedding dimension " +
                                 std::to_string(mask_embedding.size()) +
                                 " does not match feature dimension " + std::to_string(f.dim));
    FeatureSequence out = f;
    for (int t : m.masked)
        std::copy(mask_embedding.begin(), mask_embedding.end(), out.row(t));
    return out;
}

}  // namespace mul
