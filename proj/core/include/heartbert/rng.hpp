#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace heartbert {

// Deterministic xoshiro256** generator. Every consumer of randomness in the
// pipeline derives a named sub-stream from one root seed, e.g.
// Rng::substream(seed, "masking", step), so that adding a stage never
// perturbs the draws of another stage.
class Rng {
public:
    explicit Rng(uint64_t seed);

    static Rng substream(uint64_t seed, std::string_view name);
    static Rng substream(uint64_t seed, std::string_view name, uint64_t index);

    uint64_t next_u64();

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_index(uint64_t n);

    // Standard normal via Box-Muller (no cached spare, fixed draw count).
    double normal();
    double normal(double mean, double stddev);

    // Normal(0, stddev) rejected outside [-2 stddev, 2 stddev].
    double truncated_normal(double stddev);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    uint64_t state_[4];
};

// SplitMix64 step; also used to combine hashes when deriving sub-streams.
uint64_t splitmix64(uint64_t& state);

// FNV-1a over bytes, used for stream naming only (not content hashing).
uint64_t fnv1a64(std::string_view bytes);

}  // namespace heartbert
