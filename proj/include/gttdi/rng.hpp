#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace gttdi {

// Counter-based generator: every draw is a pure function of (key, counter).
// We do not use <random> distributions because their output is
// implementation-defined; all sampling here is bit-reproducible.
class Rng {
public:
    explicit Rng(std::uint64_t key) : key_(key) {}

    // Derive an independent stream from a base seed and a stream name.
    // Identical (seed, name) pairs always map to the same stream.
    static Rng stream(std::uint64_t seed, std::string_view name);

    // Derive a child stream from this one, e.g. per epoch or per cell.
    Rng fork(std::uint64_t salt) const { return Rng(mix(key_ ^ mix(salt + 0x9e3779b97f4a7c15ULL))); }

    std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n > 0.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller (no cached spare, two draws per call).
    double normal();

    // Bernoulli with probability p of returning true.
    bool bernoulli(double p) { return uniform() < p; }

    static std::uint64_t mix(std::uint64_t z);
    static std::uint64_t hash_str(std::string_view s);

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace gttdi
