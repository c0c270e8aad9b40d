#pragma once

#include "gttdi/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gttdi {

// ---- calendar ---------------------------------------------------------

struct CivilDate {
    int year = 1970;
    int month = 1; // 1..12
    int day = 1;   // 1..31
};

// Days since 1970-01-01 (proleptic Gregorian).
std::int64_t days_from_civil(const CivilDate& d);
CivilDate civil_from_days(std::int64_t z);
// 0 = Monday .. 6 = Sunday.
int weekday_from_days(std::int64_t z);

// Maps dataset day indices to calendar dates.
struct Calendar {
    CivilDate start;

    CivilDate date_of(int day_index) const;
    int weekday_of(int day_index) const; // 0 = Monday .. 6 = Sunday
    bool is_weekend(int day_index) const { return weekday_of(day_index) >= 5; }
};

// ---- road network ------------------------------------------------------

enum class Direction { North, South, East, West };

std::string direction_name(Direction d);      // "n", "s", "e", "w"
Direction direction_from_name(const std::string& s);

struct Sensor {
    std::string sensor_id;
    std::string road_id;
    double position = 0.0; // abscissa along the road, kilometres
    Direction direction = Direction::North;
};

struct RoadNetwork {
    std::vector<Sensor> sensors;
    // Pairs of sensor indices adjacent along a road.
    std::vector<std::pair<int, int>> segments;

    int size() const { return static_cast<int>(sensors.size()); }
    // Index of a sensor id; throws if unknown.
    int index_of(const std::string& sensor_id) const;

    // Checks id uniqueness and segment endpoints; throws on violation.
    void validate() const;
};

void save_network(const RoadNetwork& net, const std::string& path);
RoadNetwork load_network(const std::string& path);

// ---- traffic tensor ------------------------------------------------------

enum class Units { Flow, Speed };

std::string units_name(Units u);
Units units_from_name(const std::string& s);

// Observations shaped (K, S, L): K = D*M day-slices (day-major, so sample
// k covers day k/M, slice k%M), S sensors, L = N/M points per slice.
struct TrafficSeriesTensor {
    Tensor values;              // (K, S, L); missing entries hold 0
    std::vector<std::uint8_t> mask; // flat K*S*L, 1 = observed
    int interval_minutes = 0;
    int slices_per_day = 1;     // M
    Units units = Units::Flow;
    Calendar calendar;

    int K() const { return values.shape.empty() ? 0 : values.shape[0]; }
    int S() const { return values.shape.size() > 1 ? values.shape[1] : 0; }
    int L() const { return values.shape.size() > 2 ? values.shape[2] : 0; }
    int M() const { return slices_per_day; }
    int D() const { return K() / slices_per_day; }
    int points_per_day() const { return L() * slices_per_day; }

    int day_of_sample(int k) const { return k / slices_per_day; }
    int slice_of_sample(int k) const { return k % slices_per_day; }

    std::int64_t flat(int k, int s, int l) const {
        return (static_cast<std::int64_t>(k) * S() + s) * L() + l;
    }
    bool observed(int k, int s, int l) const { return mask[static_cast<std::size_t>(flat(k, s, l))] != 0; }
    double value(int k, int s, int l) const { return values.data[static_cast<std::size_t>(flat(k, s, l))]; }

    std::int64_t observed_count() const;
    double missing_fraction() const;

    // Shape consistency, mask/value size equality, non-negative observed
    // flow, zero sentinel at missing positions. Throws on violation.
    void validate() const;
};

// Splits a daily tensor (M = 1) into M slices per day, or regroups slices
// back into whole days. reslice(inverse_reslice(t)) is the identity.
TrafficSeriesTensor reslice(const TrafficSeriesTensor& daily, int M);
TrafficSeriesTensor inverse_reslice(const TrafficSeriesTensor& sliced);

// ---- dataset split -------------------------------------------------------

struct DatasetSplit {
    std::vector<int> train_days;
    std::vector<int> val_days;
    std::vector<int> test_days;
};

// Contiguous blocks in temporal order: train = floor(0.7 D) days, then
// validation, with the final floor(0.2 D) days as test.
DatasetSplit split_by_days(int total_days, double train_ratio = 0.7, double test_ratio = 0.2);

// Samples (day-slices) of the tensor whose day lies in `days`.
std::vector<int> samples_of_days(const TrafficSeriesTensor& t, const std::vector<int>& days);

// Sub-tensor covering a contiguous ascending block of days, renumbered
// from zero; the calendar start shifts to the first selected day.
TrafficSeriesTensor select_days(const TrafficSeriesTensor& t, const std::vector<int>& days);

// Rows of a sample-major tensor (K, S, W) for the chosen samples, in the
// given order: (|samples|, S, W).
Tensor sample_rows(const Tensor& t, const std::vector<int>& samples);

// ---- normalization -------------------------------------------------------

// Min-max statistics over observed entries of the chosen days.
struct NormStats {
    double vmin = 0.0;
    double vmax = 1.0;

    double span() const { return vmax - vmin; }
    double normalize(double v) const;
    double denormalize(double v) const;
};

NormStats compute_norm_stats(const TrafficSeriesTensor& t, const std::vector<int>& days);

// ---- file formats ----------------------------------------------------------

// CSV: one row per (sensor_id, timestamp ISO-8601, value); a missing row or
// empty value field means unobserved. Sensor order follows the network.
TrafficSeriesTensor load_csv(const std::string& path, const RoadNetwork& net,
                             int interval_minutes, Units units);
void save_csv(const TrafficSeriesTensor& daily, const RoadNetwork& net, const std::string& path);

// Binary cache: magic + version header with the tensor geometry, then
// row-major 64-bit little-endian values and packed mask bits.
void save_cache(const TrafficSeriesTensor& t, const std::string& path);
TrafficSeriesTensor load_cache(const std::string& path);

// Standalone observation masks in the same packed-bit encoding.
void save_mask(const std::vector<std::uint8_t>& mask, int K, int S, int L,
               const std::string& path);
std::vector<std::uint8_t> load_mask(const std::string& path, int& K, int& S, int& L);

} // namespace gttdi
