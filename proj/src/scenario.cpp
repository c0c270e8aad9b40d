#include "gttdi/scenario.hpp"

#include "gttdi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace gttdi {

namespace {

// Gaussian bump centered at `peak` hours with width `sigma` hours.
double bump(double hour, double peak, double sigma) {
    const double z = (hour - peak) / sigma;
    return std::exp(-0.5 * z * z);
}

struct RoadProfile {
    double amplitude;    // peak height above the floor
    double floor;        // free-flow night level
    double morning_peak; // hours
    double evening_peak;
    double morning_sigma;
    double evening_sigma;
    double evening_scale;

    double at(double hour) const {
        return floor + amplitude * (bump(hour, morning_peak, morning_sigma) +
                                    evening_scale * bump(hour, evening_peak, evening_sigma));
    }
};

RoadProfile draw_road_profile(Rng& rng) {
    RoadProfile p;
    p.amplitude = rng.uniform(80.0, 130.0);
    p.floor = rng.uniform(25.0, 40.0);
    p.morning_peak = rng.uniform(7.5, 9.0);
    p.evening_peak = rng.uniform(16.5, 18.5);
    p.morning_sigma = rng.uniform(1.4, 2.2);
    p.evening_sigma = rng.uniform(1.6, 2.4);
    p.evening_scale = rng.uniform(0.75, 0.95);
    return p;
}

// Sensors per road for the chosen topology; sizes sum to S.
std::vector<int> road_sizes(Topology topology, int n_sensors) {
    int n_roads = 1;
    switch (topology) {
    case Topology::Chain:
        n_roads = 1;
        break;
    case Topology::TwoCorridors:
        n_roads = 2;
        break;
    case Topology::Grid:
        n_roads = std::max(2, static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_sensors)))));
        break;
    }
    n_roads = std::min(n_roads, n_sensors);
    std::vector<int> sizes(static_cast<std::size_t>(n_roads), n_sensors / n_roads);
    for (int i = 0; i < n_sensors % n_roads; ++i) sizes[static_cast<std::size_t>(i)] += 1;
    return sizes;
}

} // namespace

std::string topology_name(Topology t) {
    switch (t) {
    case Topology::Chain: return "chain";
    case Topology::Grid: return "grid";
    case Topology::TwoCorridors: return "two-corridors";
    }
    throw std::logic_error("unreachable topology");
}

Topology topology_from_name(const std::string& s) {
    if (s == "chain") return Topology::Chain;
    if (s == "grid") return Topology::Grid;
    if (s == "two-corridors") return Topology::TwoCorridors;
    throw std::invalid_argument("unknown topology '" + s + "'");
}

void ScenarioConfig::validate() const {
    if (n_sensors < 2) throw std::invalid_argument("scenario needs at least 2 sensors");
    if (n_days < 3) throw std::invalid_argument("scenario needs at least 3 days");
    if (points_per_day < 1) throw std::invalid_argument("scenario needs a positive points_per_day");
    if (slices < 1 || points_per_day % slices != 0) {
        throw std::invalid_argument("slices (" + std::to_string(slices) +
                                    ") must divide points_per_day (" + std::to_string(points_per_day) +
                                    ")");
    }
    if (!(weekend_factor > 0.0)) throw std::invalid_argument("weekend_factor must be positive");
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be non-negative");
    if ((24 * 60) % points_per_day != 0) {
        throw std::invalid_argument("points_per_day (" + std::to_string(points_per_day) +
                                    ") must divide the 1440 minutes of a day");
    }
}

Scenario generate(const ScenarioConfig& config) {
    config.validate();
    const int S = config.n_sensors, D = config.n_days, N = config.points_per_day;

    Scenario sc;
    Rng road_rng = Rng::stream(config.seed, "scenario/roads");
    Rng sensor_rng = Rng::stream(config.seed, "scenario/sensors");

    std::vector<int> sizes = road_sizes(config.topology, S);
    std::vector<RoadProfile> profiles;
    std::vector<int> road_of(static_cast<std::size_t>(S));
    const Direction dirs[4] = {Direction::North, Direction::East, Direction::South, Direction::West};

    int sensor = 0;
    for (std::size_t r = 0; r < sizes.size(); ++r) {
        profiles.push_back(draw_road_profile(road_rng));
        const std::string road_id = "r" + std::to_string(r);
        double position = 0.0;
        for (int j = 0; j < sizes[r]; ++j, ++sensor) {
            position += sensor_rng.uniform(0.8, 1.6); // km spacing along the road
            Sensor s;
            s.sensor_id = "s" + std::to_string(1000 + sensor);
            s.road_id = road_id;
            s.position = position;
            s.direction = dirs[r % 4];
            sc.network.sensors.push_back(std::move(s));
            road_of[static_cast<std::size_t>(sensor)] = static_cast<int>(r);
            if (j > 0) sc.network.segments.emplace_back(sensor - 1, sensor);
        }
    }
    sc.network.validate();

    // Per-sensor variation around the road profile.
    std::vector<double> amp(static_cast<std::size_t>(S)), phase(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
        amp[static_cast<std::size_t>(s)] = sensor_rng.uniform(0.85, 1.15);
        phase[static_cast<std::size_t>(s)] = sensor_rng.uniform(-0.4, 0.4); // hours
    }

    TrafficSeriesTensor daily;
    daily.values = Tensor({D, S, N});
    daily.mask.assign(static_cast<std::size_t>(daily.values.numel()), 1);
    daily.interval_minutes = (24 * 60) / N;
    daily.slices_per_day = 1;
    daily.units = Units::Flow;
    daily.calendar.start = {2013, 1, 1};

    Rng noise_rng = Rng::stream(config.seed, "scenario/noise");
    for (int d = 0; d < D; ++d) {
        const double day_factor = daily.calendar.is_weekend(d) ? config.weekend_factor : 1.0;
        for (int s = 0; s < S; ++s) {
            const RoadProfile& prof = profiles[static_cast<std::size_t>(road_of[static_cast<std::size_t>(s)])];
            for (int n = 0; n < N; ++n) {
                const double hour = (static_cast<double>(n) + 0.5) * 24.0 / N;
                double v = day_factor * amp[static_cast<std::size_t>(s)] *
                           prof.at(hour - phase[static_cast<std::size_t>(s)]);
                v += config.noise_std * noise_rng.normal();
                daily.values.data[static_cast<std::size_t>(daily.flat(d, s, n))] = std::max(0.0, v);
            }
        }
    }
    daily.validate();
    sc.truth = config.slices == 1 ? std::move(daily) : reslice(daily, config.slices);
    return sc;
}

} // namespace gttdi
