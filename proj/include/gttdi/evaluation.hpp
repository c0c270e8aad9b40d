#pragma once

#include "gttdi/data_model.hpp"
#include "gttdi/scenario.hpp"
#include "gttdi/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gttdi {

// ---- metrics ---------------------------------------------------------------

// Mean arctangent absolute percentage error over the selected entries:
// arctan(|Y - Yhat| / |Y|), with the Y = 0 ratio taken as +inf so the term
// is pi/2. Bounded in [0, pi/2]. Throws on an empty selection.
double maape(const Tensor& truth, const Tensor& prediction, const std::vector<std::uint8_t>& selected);

// Root mean squared error over the selected entries. Throws when empty.
double rmse(const Tensor& truth, const Tensor& prediction, const std::vector<std::uint8_t>& selected);

// Selection vector for metric evaluation: 1 exactly where the ground truth
// is observed but the corrupted input is not (the imputed cells).
std::vector<std::uint8_t> imputed_cells(const TrafficSeriesTensor& truth,
                                        const std::vector<std::uint8_t>& corrupted_mask);

// ---- baselines --------------------------------------------------------------

// Historical average: each missing (sensor, slice, point) takes the mean of
// the observed values at the same coordinates across days; falls back to
// the sensor mean, then the global mean. Throws when nothing is observed.
Tensor ha_impute(const TrafficSeriesTensor& y);

// Per-(sample, sensor) nearest neighbors among the same sensor's other
// samples, by RMS distance over co-observed points (at least one shared
// point required); missing points take the mean of the neighbors' observed
// values there, falling back to the historical average.
Tensor knn_impute(const TrafficSeriesTensor& y, int k = 5);

// ---- reports ----------------------------------------------------------------

struct MetricsRow {
    std::string method;  // "gt-tdi", "ha", "knn", or an ablation cell label
    std::string pattern; // "rm" / "nm"
    double rate = 0.0;
    double maape_value = 0.0;
    double rmse_value = 0.0;
    double wall_seconds = 0.0; // always 0 in reports; timing lives in manifests
    std::uint64_t seed = 0;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;

    void validate() const; // metric ranges
};

// Line-delimited structured records, one per row, byte-stable across runs.
void save_report_jsonl(const MetricsReport& report, const std::string& path);
MetricsReport load_report_jsonl(const std::string& path);

// Aligned text table for reading at a terminal.
void save_report_table(const MetricsReport& report, const std::string& path);

// ---- ablation harness ----------------------------------------------------------

enum class AblationAxis {
    SemanticLabels,    // cumulative prefix counts 0..8 of the label set
    Slices,            // M in {1, 2, 4, 6, 8, 12}
    KlLoss,            // off / on
    PatternEdges,      // off / on
    PatternNeighbors,  // per-sensor neighbor count {1, 3, 5, 7, 9}
};

std::string axis_name(AblationAxis a);
AblationAxis axis_from_name(const std::string& s);
std::vector<int> default_axis_values(AblationAxis a);

struct AblationCell {
    std::string axis;
    int value = 0;       // the axis value this cell realizes
    std::string label;   // human-readable cell name
    double avg_maape = 0.0; // mean over the evaluated missing rates
    double avg_rmse = 0.0;
};

struct AblationReport {
    std::vector<AblationCell> cells;
    MetricsReport per_rate; // one row per (cell, rate)
};

// Trains one configuration per axis value on the shared scenario and
// evaluates it on the test split at missing rates 0.1 .. 0.9, reporting the
// average MAAPE per cell. All cells share the caller's seed, so every axis
// value faces identical corruption, initialization, and evaluation draws
// and the comparison isolates the configuration change. Cells run on worker
// threads (0 = one per cell, capped by hardware concurrency); results do
// not depend on the thread count.
AblationReport ablate(const ScenarioConfig& scenario, AblationAxis axis, const ModelConfig& model_base,
                      const TrainConfig& train_base, std::vector<int> values = {}, int n_threads = 0);

void save_ablation_jsonl(const AblationReport& report, const std::string& path);

} // namespace gttdi
