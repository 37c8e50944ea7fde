#include "mul/rng.hpp"

#include <cmath>

namespace mul {

namespace {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a, uint64_t b) {
    uint64_t state = root ^ fnv1a(tag);
    splitmix64(state);
    state ^= 0x6a09e667f3bcc909ull + a;
    splitmix64(state);
    state ^= 0xbb67ae8584caa73bull + b;
    return splitmix64(state);
}

int64_t Rng::uniform_int(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
}

double Rng::gaussian() {
    // u1 in (0,1] so the log is finite.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace mul
