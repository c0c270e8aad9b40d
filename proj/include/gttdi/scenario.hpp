#pragma once

#include "gttdi/data_model.hpp"

#include <cstdint>
#include <string>

namespace gttdi {

enum class Topology { Chain, Grid, TwoCorridors };

std::string topology_name(Topology t); // "chain", "grid", "two-corridors"
Topology topology_from_name(const std::string& s);

// Synthetic road network plus diurnal traffic with known ground truth.
struct ScenarioConfig {
    int n_sensors = 20;
    int n_days = 30;
    int points_per_day = 48;
    int slices = 4; // M
    Topology topology = Topology::TwoCorridors;
    double noise_std = 5.0;      // additive, in flow units
    double weekend_factor = 0.7; // weekend scale relative to weekdays
    std::uint64_t seed = 0;

    // M divides N, S >= 2, D >= 3, factor > 0, noise >= 0. Throws.
    void validate() const;
};

struct Scenario {
    RoadNetwork network;
    TrafficSeriesTensor truth; // (D*M, S, N/M), all-true mask
};

// Each road carries a two-peak daily profile; sensors inherit it with a
// small amplitude/phase variation plus additive noise, weekends are
// scaled down, and values clamp at zero. Bit-reproducible per seed.
Scenario generate(const ScenarioConfig& config);

} // namespace gttdi
