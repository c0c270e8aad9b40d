#include "gttdi/corruption.hpp"

#include "gttdi/rng.hpp"

#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace gttdi {

namespace {

void check_rate(double rate) {
    if (!(rate >= 0.0 && rate <= 1.0))
        throw std::invalid_argument("missing rate " + std::to_string(rate) +
                                    " outside [0, 1]");
}

// One generator per (seed, pattern, rate) experiment cell.
Rng cell_rng(std::uint64_t seed, const char* pattern, double rate) {
    char name[48];
    std::snprintf(name, sizeof name, "corrupt/%s/%.4f", pattern, rate);
    return Rng::stream(seed, name);
}

} // namespace

std::string pattern_name(MissingPattern p) {
    return p == MissingPattern::RandomMissing ? "rm" : "nm";
}

MissingPattern pattern_from_name(const std::string& s) {
    if (s == "rm") return MissingPattern::RandomMissing;
    if (s == "nm") return MissingPattern::NonRandomMissing;
    throw std::invalid_argument("unknown missing pattern '" + s + "' (expected rm or nm)");
}

std::vector<std::uint8_t> apply_random_missing(const TrafficSeriesTensor& t, double rate,
                                               std::uint64_t seed) {
    check_rate(rate);
    Rng rng = cell_rng(seed, "rm", rate);
    std::vector<std::uint8_t> out = t.mask;
    for (std::uint8_t& b : out)
        if (b && rng.bernoulli(rate)) b = 0;
    return out;
}

std::vector<std::uint8_t> apply_nonrandom_missing(const TrafficSeriesTensor& t, double rate,
                                                  std::uint64_t seed) {
    check_rate(rate);
    Rng rng = cell_rng(seed, "nm", rate);
    std::vector<std::uint8_t> out = t.mask;

    const int D = t.D(), S = t.S();
    const double total = static_cast<double>(out.size());
    std::int64_t missing = static_cast<std::int64_t>(out.size()) - t.observed_count();

    // Fisher-Yates order over all (day, sensor) fibers.
    std::vector<int> fibers(static_cast<std::size_t>(D) * S);
    std::iota(fibers.begin(), fibers.end(), 0);
    for (int i = static_cast<int>(fibers.size()) - 1; i > 0; --i)
        std::swap(fibers[static_cast<std::size_t>(i)],
                  fibers[static_cast<std::size_t>(rng.uniform_int(i + 1))]);

    // Integer missing counts against a real-valued target; the tiny slack
    // keeps rates like 0.1 that are not exactly representable from pulling
    // in one fiber too many.
    const double target = rate * total - 1e-9 * total;
    for (int fiber : fibers) {
        if (static_cast<double>(missing) >= target) break;
        const int d = fiber / S;
        const int s = fiber % S;
        for (int m = 0; m < t.M(); ++m) {
            const int k = d * t.M() + m;
            for (int l = 0; l < t.L(); ++l) {
                std::uint8_t& b = out[static_cast<std::size_t>(t.flat(k, s, l))];
                if (b) {
                    b = 0;
                    ++missing;
                }
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> corrupt_mask(const TrafficSeriesTensor& t, const CorruptionSpec& spec) {
    return spec.pattern == MissingPattern::RandomMissing
               ? apply_random_missing(t, spec.rate, spec.seed)
               : apply_nonrandom_missing(t, spec.rate, spec.seed);
}

TrafficSeriesTensor apply_mask(const TrafficSeriesTensor& t, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != t.mask.size())
        throw std::invalid_argument("mask size " + std::to_string(mask.size()) +
                                    " does not match tensor " + shape_str(t.values.shape));
    TrafficSeriesTensor out = t;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] && !t.mask[i])
            throw std::invalid_argument("mask marks a missing entry as observed at flat index " +
                                        std::to_string(i));
        out.mask[i] = mask[i];
        if (!mask[i]) out.values.data[i] = 0.0;
    }
    return out;
}

} // namespace gttdi
