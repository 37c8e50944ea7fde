#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mul/masking.hpp"
#include "mul/rng.hpp"

using namespace mul;

namespace {

// Independent reimplementation for the Monte-Carlo oracle: selection by
// shuffling a full index vector with a different generator, coverage via a
// std::set.
double oracle_masked_fraction(int T, double p, int l, uint64_t seed) {
    const int n_starts = static_cast<int>(std::llround(p * T));
    std::vector<int> idx(T);
    for (int i = 0; i < T; ++i) idx[i] = i;
    std::mt19937 gen(static_cast<uint32_t>(seed));
    for (int i = T - 1; i > 0; --i) {
        const int j = static_cast<int>(gen() % static_cast<uint32_t>(i + 1));
        std::swap(idx[i], idx[j]);
    }
    std::set<int> covered;
    for (int s = 0; s < n_starts; ++s)
        for (int t = idx[s]; t < std::min(idx[s] + l, T); ++t) covered.insert(t);
    return static_cast<double>(covered.size()) / T;
}

}  // namespace

TEST_CASE("sample_mask basics") {
    SUBCASE("p = 0 yields the empty mask") {
        const MaskSpec m = sample_mask(100, {0.0, 10}, 1);
        CHECK(m.masked.empty());
        CHECK(m.T == 100);
    }
    SUBCASE("defaults are p=0.08, l=10") {
        MaskConfig cfg;
        CHECK(cfg.p == 0.08);
        CHECK(cfg.l == 10);
    }
    SUBCASE("determinism: same seed, same mask") {
        const MaskSpec a = sample_mask(500, {0.08, 10}, 77);
        const MaskSpec b = sample_mask(500, {0.08, 10}, 77);
        CHECK(a.masked == b.masked);
        const MaskSpec c = sample_mask(500, {0.08, 10}, 78);
        CHECK(a.masked != c.masked);
    }
    SUBCASE("small T rounding: round(p*T)=0 gives an empty mask") {
        const MaskSpec m = sample_mask(5, {0.08, 10}, 3);
        CHECK(m.masked.empty());
    }
    SUBCASE("round half up") {
        // p*T = 0.5 rounds to 1 start
        const MaskSpec m = sample_mask(10, {0.05, 2}, 9);
        CHECK(!m.masked.empty());
    }
}

TEST_CASE("mask structure: spans, clipping, start count") {
    Rng trial_rng(4242);
    for (int trial = 0; trial < 200; ++trial) {
        const int T = 1 + static_cast<int>(trial_rng.uniform_int(400));
        const double p = trial_rng.uniform() * 0.3;
        const int l = 1 + static_cast<int>(trial_rng.uniform_int(15));
        const MaskSpec m = sample_mask(T, {p, l}, derive_seed(1, "trial", trial));

        // sorted, unique, in range
        CHECK(std::is_sorted(m.masked.begin(), m.masked.end()));
        CHECK(std::adjacent_find(m.masked.begin(), m.masked.end()) == m.masked.end());
        for (int t : m.masked) {
            CHECK(t >= 0);
            CHECK(t < T);
        }

        // size bound from the start count
        const int n_starts = static_cast<int>(std::llround(p * T));
        if (n_starts == 0) {
            CHECK(m.masked.empty());
        } else {
            CHECK(!m.masked.empty());
            CHECK(static_cast<int>(m.masked.size()) <= n_starts * l);
        }

        // every maximal run begins at a span start, so it covers at least
        // min(l, T - start) frames
        size_t i = 0;
        while (i < m.masked.size()) {
            const int a = m.masked[i];
            size_t j = i;
            while (j + 1 < m.masked.size() && m.masked[j + 1] == m.masked[j] + 1) ++j;
            const int run_len = m.masked[j] - a + 1;
            CHECK(run_len >= std::min(l, T - a));
            i = j + 1;
        }
    }
}

TEST_CASE("mask spans reconstruct from their parameters") {
    // With l=1 the masked set must be exactly round(p*T) singleton starts.
    const MaskSpec m = sample_mask(1000, {0.25, 1}, 5);
    CHECK(m.masked.size() == 250);
}

TEST_CASE("Monte-Carlo masked fraction matches the independent oracle") {
    const int T = 1000, l = 10;
    const double p = 0.08;
    const int draws = 10000;
    double impl_mean = 0.0, oracle_mean = 0.0;
    for (int i = 0; i < draws; ++i) {
        const MaskSpec m = sample_mask(T, {p, l}, derive_seed(7, "mc", i));
        impl_mean += static_cast<double>(m.masked.size()) / T;
        oracle_mean += oracle_masked_fraction(T, p, l, derive_seed(11, "mc-oracle", i));
    }
    impl_mean /= draws;
    oracle_mean /= draws;
    CHECK(std::abs(impl_mean - oracle_mean) < 0.005);
}

TEST_CASE("corrupt") {
    FeatureSequence f;
    f.rows = 6;
    f.dim = 3;
    f.data.resize(18);
    for (size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>(i);
    const std::vector<float> emb = {-1.0f, -2.0f, -3.0f};

    SUBCASE("empty mask is the identity") {
        MaskSpec m;
        m.T = 6;
        const FeatureSequence out = corrupt(f, m, emb);
        CHECK(out.data == f.data);
    }
    SUBCASE("full mask replaces every row") {
        MaskSpec m;
        m.T = 6;
        m.masked = {0, 1, 2, 3, 4, 5};
        const FeatureSequence out = corrupt(f, m, emb);
        for (int t = 0; t < 6; ++t)
            for (int j = 0; j < 3; ++j) CHECK(out.row(t)[j] == emb[j]);
    }
    SUBCASE("mask {2,3,4} on T=6 replaces rows 2-4 only") {
        MaskSpec m;
        m.T = 6;
        m.masked = {2, 3, 4};
        const FeatureSequence out = corrupt(f, m, emb);
        for (int t : {0, 1, 5})
            for (int j = 0; j < 3; ++j) CHECK(out.row(t)[j] == f.row(t)[j]);
        for (int t : {2, 3, 4})
            for (int j = 0; j < 3; ++j) CHECK(out.row(t)[j] == emb[j]);
    }
    SUBCASE("idempotent under the same mask") {
        MaskSpec m;
        m.T = 6;
        m.masked = {1, 4};
        const FeatureSequence once = corrupt(f, m, emb);
        const FeatureSequence twice = corrupt(once, m, emb);
        CHECK(once.data == twice.data);
    }
    SUBCASE("length and dimension mismatches are rejected") {
        MaskSpec m;
        m.T = 5;
        CHECK_THROWS(corrupt(f, m, emb));
        m.T = 6;
        CHECK_THROWS(corrupt(f, m, std::vector<float>{1.0f, 2.0f}));
    }
}
