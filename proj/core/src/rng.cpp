#include "heartbert/rng.hpp"

#include <cmath>

#include "heartbert/errors.hpp"

namespace heartbert {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Rng::Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
}

Rng Rng::substream(uint64_t seed, std::string_view name) {
    uint64_t s = seed ^ fnv1a64(name);
    return Rng(splitmix64(s));
}

Rng Rng::substream(uint64_t seed, std::string_view name, uint64_t index) {
    uint64_t s = seed ^ fnv1a64(name);
    s = splitmix64(s) ^ (index * 0x9e3779b97f4a7c15ULL);
    return Rng(splitmix64(s));
}

static inline uint64_t rotl(uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

uint64_t Rng::uniform_index(uint64_t n) {
    if (n == 0) fail(ErrorKind::Parameter, "uniform_index: n must be positive");
    // Multiply-shift bounded draw (Lemire, without rejection); bias is
    // negligible for the index ranges used here and the result is a pure
    // function of the stream state.
    unsigned __int128 product = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<uint64_t>(product >> 64);
}

double Rng::normal() {
    // Box-Muller, always consuming exactly two uniforms.
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

double Rng::truncated_normal(double stddev) {
    for (;;) {
        double z = normal();
        if (z >= -2.0 && z <= 2.0) return z * stddev;
    }
}

}  // namespace heartbert
