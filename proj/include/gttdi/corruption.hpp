#pragma once

#include "gttdi/data_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gttdi {

enum class MissingPattern { RandomMissing, NonRandomMissing };

std::string pattern_name(MissingPattern p);          // "rm" / "nm"
MissingPattern pattern_from_name(const std::string& s);

struct CorruptionSpec {
    MissingPattern pattern = MissingPattern::RandomMissing;
    double rate = 0.0;
    std::uint64_t seed = 0;
};

// Each observed entry goes missing independently with probability `rate`.
std::vector<std::uint8_t> apply_random_missing(const TrafficSeriesTensor& t, double rate,
                                               std::uint64_t seed);

// Whole (sensor, day) fibers go missing, drawn without replacement until
// the global missing fraction first reaches the rate.
std::vector<std::uint8_t> apply_nonrandom_missing(const TrafficSeriesTensor& t, double rate,
                                                  std::uint64_t seed);

std::vector<std::uint8_t> corrupt_mask(const TrafficSeriesTensor& t, const CorruptionSpec& spec);

// Copies the tensor, installs the corrupted mask and zeroes the now-missing
// values so the sentinel invariant keeps holding.
TrafficSeriesTensor apply_mask(const TrafficSeriesTensor& t, const std::vector<std::uint8_t>& mask);

} // namespace gttdi
