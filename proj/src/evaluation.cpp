#include "gttdi/evaluation.hpp"

#include "gttdi/graph_construction.hpp"
#include "gttdi/rng.hpp"
#include "gttdi/semantic_embedding.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace gttdi {

namespace {

void check_metric_inputs(const Tensor& truth, const Tensor& prediction,
                         const std::vector<std::uint8_t>& selected) {
    if (!truth.same_shape(prediction)) {
        throw std::invalid_argument("metric inputs differ in shape: " + shape_str(truth.shape) +
                                    " vs " + shape_str(prediction.shape));
    }
    if (static_cast<std::int64_t>(selected.size()) != truth.numel()) {
        throw std::invalid_argument("metric selection covers " + std::to_string(selected.size()) +
                                    " entries, tensors hold " + std::to_string(truth.numel()));
    }
}

} // namespace

double maape(const Tensor& truth, const Tensor& prediction, const std::vector<std::uint8_t>& selected) {
    check_metric_inputs(truth, prediction, selected);
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < truth.numel(); ++i) {
        if (!selected[static_cast<std::size_t>(i)]) continue;
        const double y = truth.data[static_cast<std::size_t>(i)];
        const double yhat = prediction.data[static_cast<std::size_t>(i)];
        double term;
        if (y == 0.0) {
            term = yhat == 0.0 ? 0.0 : std::numbers::pi / 2.0;
        } else {
            term = std::atan(std::abs(y - yhat) / std::abs(y));
        }
        acc += term;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("metric selection is empty");
    return acc / static_cast<double>(n);
}

double rmse(const Tensor& truth, const Tensor& prediction, const std::vector<std::uint8_t>& selected) {
    check_metric_inputs(truth, prediction, selected);
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < truth.numel(); ++i) {
        if (!selected[static_cast<std::size_t>(i)]) continue;
        const double d = truth.data[static_cast<std::size_t>(i)] - prediction.data[static_cast<std::size_t>(i)];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("metric selection is empty");
    return std::sqrt(acc / static_cast<double>(n));
}

std::vector<std::uint8_t> imputed_cells(const TrafficSeriesTensor& truth,
                                        const std::vector<std::uint8_t>& corrupted_mask) {
    if (corrupted_mask.size() != truth.mask.size()) {
        throw std::invalid_argument("corrupted mask covers " + std::to_string(corrupted_mask.size()) +
                                    " entries, tensor holds " + std::to_string(truth.mask.size()));
    }
    std::vector<std::uint8_t> sel(truth.mask.size(), 0);
    for (std::size_t i = 0; i < sel.size(); ++i) {
        sel[i] = (truth.mask[i] != 0 && corrupted_mask[i] == 0) ? 1 : 0;
    }
    return sel;
}

Tensor ha_impute(const TrafficSeriesTensor& y) {
    y.validate();
    const int K = y.K(), S = y.S(), L = y.L(), M = y.M();

    double global_sum = 0.0;
    std::int64_t global_n = 0;
    std::vector<double> sensor_sum(static_cast<std::size_t>(S), 0.0);
    std::vector<std::int64_t> sensor_n(static_cast<std::size_t>(S), 0);
    // Means across days at fixed (sensor, slice, point).
    std::vector<double> cell_sum(static_cast<std::size_t>(M) * S * L, 0.0);
    std::vector<std::int64_t> cell_n(static_cast<std::size_t>(M) * S * L, 0);

    for (int k = 0; k < K; ++k) {
        const int m = y.slice_of_sample(k);
        for (int s = 0; s < S; ++s) {
            for (int l = 0; l < L; ++l) {
                if (!y.observed(k, s, l)) continue;
                const double v = y.value(k, s, l);
                const std::size_t cell = (static_cast<std::size_t>(m) * S + static_cast<std::size_t>(s)) * L +
                                         static_cast<std::size_t>(l);
                cell_sum[cell] += v;
                cell_n[cell] += 1;
                sensor_sum[static_cast<std::size_t>(s)] += v;
                sensor_n[static_cast<std::size_t>(s)] += 1;
                global_sum += v;
                global_n += 1;
            }
        }
    }
    if (global_n == 0) throw std::invalid_argument("historical average needs at least one observed value");
    const double global_mean = global_sum / static_cast<double>(global_n);

    Tensor out = y.values;
    for (int k = 0; k < K; ++k) {
        const int m = y.slice_of_sample(k);
        for (int s = 0; s < S; ++s) {
            for (int l = 0; l < L; ++l) {
                if (y.observed(k, s, l)) continue;
                const std::size_t cell = (static_cast<std::size_t>(m) * S + static_cast<std::size_t>(s)) * L +
                                         static_cast<std::size_t>(l);
                double v;
                if (cell_n[cell] > 0) {
                    v = cell_sum[cell] / static_cast<double>(cell_n[cell]);
                } else if (sensor_n[static_cast<std::size_t>(s)] > 0) {
                    v = sensor_sum[static_cast<std::size_t>(s)] / static_cast<double>(sensor_n[static_cast<std::size_t>(s)]);
                } else {
                    v = global_mean;
                }
                out.data[static_cast<std::size_t>(y.flat(k, s, l))] = v;
            }
        }
    }
    return out;
}

Tensor knn_impute(const TrafficSeriesTensor& y, int k) {
    if (k < 1) throw std::invalid_argument("neighbor count must be positive, got " + std::to_string(k));
    y.validate();
    const int K = y.K(), S = y.S(), L = y.L();
    Tensor out = ha_impute(y); // fallback for undefined neighborhoods

    for (int s = 0; s < S; ++s) {
        for (int ki = 0; ki < K; ++ki) {
            bool any_missing = false;
            for (int l = 0; l < L; ++l) any_missing = any_missing || !y.observed(ki, s, l);
            if (!any_missing) continue;

            // RMS distance over co-observed points against every other
            // sample of the same sensor; ties break on the sample index.
            std::vector<std::pair<double, int>> candidates;
            for (int kj = 0; kj < K; ++kj) {
                if (kj == ki) continue;
                double acc = 0.0;
                int shared = 0;
                for (int l = 0; l < L; ++l) {
                    if (y.observed(ki, s, l) && y.observed(kj, s, l)) {
                        const double d = y.value(ki, s, l) - y.value(kj, s, l);
                        acc += d * d;
                        ++shared;
                    }
                }
                if (shared > 0) candidates.emplace_back(std::sqrt(acc / shared), kj);
            }
            if (candidates.empty()) continue; // historical average stays
            std::sort(candidates.begin(), candidates.end());
            const int take = std::min<int>(k, static_cast<int>(candidates.size()));

            for (int l = 0; l < L; ++l) {
                if (y.observed(ki, s, l)) continue;
                double acc = 0.0;
                int n = 0;
                for (int c = 0; c < take; ++c) {
                    const int kj = candidates[static_cast<std::size_t>(c)].second;
                    if (y.observed(kj, s, l)) {
                        acc += y.value(kj, s, l);
                        ++n;
                    }
                }
                if (n > 0) out.data[static_cast<std::size_t>(y.flat(ki, s, l))] = acc / n;
            }
        }
    }
    return out;
}

// ---- reports ------------------------------------------------------------

void MetricsReport::validate() const {
    const double half_pi = std::numbers::pi / 2.0;
    for (const MetricsRow& r : rows) {
        if (r.method.empty() || r.pattern.empty()) {
            throw std::invalid_argument("report row lacks a method or pattern label");
        }
        if (!(r.maape_value >= 0.0 && r.maape_value <= half_pi + 1e-12)) {
            throw std::invalid_argument("MAAPE " + std::to_string(r.maape_value) +
                                        " outside [0, pi/2] in report row");
        }
        if (!(r.rmse_value >= 0.0)) {
            throw std::invalid_argument("negative RMSE in report row");
        }
        if (!(r.rate >= 0.0 && r.rate <= 1.0)) {
            throw std::invalid_argument("missing rate outside [0, 1] in report row");
        }
    }
}

void save_report_jsonl(const MetricsReport& report, const std::string& path) {
    report.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open report for writing: " + path);
    for (const MetricsRow& r : report.rows) {
        nlohmann::ordered_json j;
        j["method"] = r.method;
        j["pattern"] = r.pattern;
        j["rate"] = r.rate;
        j["maape"] = r.maape_value;
        j["rmse"] = r.rmse_value;
        j["wall_seconds"] = r.wall_seconds;
        j["seed"] = r.seed;
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("failed writing report: " + path);
}

MetricsReport load_report_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open report: " + path);
    MetricsReport report;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        MetricsRow r;
        r.method = j.at("method").get<std::string>();
        r.pattern = j.at("pattern").get<std::string>();
        r.rate = j.at("rate").get<double>();
        r.maape_value = j.at("maape").get<double>();
        r.rmse_value = j.at("rmse").get<double>();
        r.wall_seconds = j.at("wall_seconds").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        report.rows.push_back(std::move(r));
    }
    report.validate();
    return report;
}

void save_report_table(const MetricsReport& report, const std::string& path) {
    report.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open report for writing: " + path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-18s %-8s %6s %10s %12s %8s %20s\n", "method", "pattern",
                  "rate", "MAAPE", "RMSE", "wall_s", "seed");
    os << buf;
    os << std::string(18 + 1 + 8 + 1 + 6 + 1 + 10 + 1 + 12 + 1 + 8 + 1 + 20, '-') << "\n";
    for (const MetricsRow& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%-18s %-8s %6.2f %10.6f %12.4f %8.3f %20llu\n",
                      r.method.c_str(), r.pattern.c_str(), r.rate, r.maape_value, r.rmse_value,
                      r.wall_seconds, static_cast<unsigned long long>(r.seed));
        os << buf;
    }
    if (!os) throw std::runtime_error("failed writing report: " + path);
}

// ---- ablation harness -------------------------------------------------------

std::string axis_name(AblationAxis a) {
    switch (a) {
    case AblationAxis::SemanticLabels: return "semantic-labels";
    case AblationAxis::Slices: return "slices";
    case AblationAxis::KlLoss: return "kl-loss";
    case AblationAxis::PatternEdges: return "pattern-edges";
    case AblationAxis::PatternNeighbors: return "neighbors";
    }
    throw std::logic_error("unreachable ablation axis");
}

AblationAxis axis_from_name(const std::string& s) {
    if (s == "semantic-labels") return AblationAxis::SemanticLabels;
    if (s == "slices") return AblationAxis::Slices;
    if (s == "kl-loss") return AblationAxis::KlLoss;
    if (s == "pattern-edges") return AblationAxis::PatternEdges;
    if (s == "neighbors") return AblationAxis::PatternNeighbors;
    throw std::invalid_argument("unknown ablation axis '" + s + "'");
}

std::vector<int> default_axis_values(AblationAxis a) {
    switch (a) {
    case AblationAxis::SemanticLabels: return {0, 1, 2, 3, 4, 5, 6, 7, 8};
    case AblationAxis::Slices: return {1, 2, 4, 6, 8, 12};
    case AblationAxis::KlLoss: return {0, 1};
    case AblationAxis::PatternEdges: return {0, 1};
    case AblationAxis::PatternNeighbors: return {1, 3, 5, 7, 9};
    }
    throw std::logic_error("unreachable ablation axis");
}

namespace {

void validate_axis_value(AblationAxis axis, int value) {
    bool ok = true;
    switch (axis) {
    case AblationAxis::SemanticLabels: ok = value >= 0 && value <= kSemanticLabels; break;
    case AblationAxis::Slices: ok = value >= 1; break;
    case AblationAxis::KlLoss:
    case AblationAxis::PatternEdges: ok = value == 0 || value == 1; break;
    case AblationAxis::PatternNeighbors: ok = value >= 1; break;
    }
    if (!ok) {
        throw std::invalid_argument("invalid value " + std::to_string(value) + " for ablation axis " +
                                    axis_name(axis));
    }
}

std::string cell_label(AblationAxis axis, int value) {
    switch (axis) {
    case AblationAxis::SemanticLabels: return "labels=" + std::to_string(value);
    case AblationAxis::Slices: return "m=" + std::to_string(value);
    case AblationAxis::KlLoss: return value ? "kl-on" : "kl-off";
    case AblationAxis::PatternEdges: return value ? "pattern-on" : "pattern-off";
    case AblationAxis::PatternNeighbors: return "neighbors=" + std::to_string(value);
    }
    throw std::logic_error("unreachable ablation axis");
}

struct CellOutcome {
    AblationCell cell;
    std::vector<MetricsRow> rows;
};

CellOutcome run_cell(const ScenarioConfig& scenario_base, AblationAxis axis, int value,
                     const ModelConfig& model_base, const TrainConfig& train_base) {
    validate_axis_value(axis, value);

    ScenarioConfig scfg = scenario_base;
    if (axis == AblationAxis::Slices) scfg.slices = value;
    scfg.validate();

    // Every cell keeps the caller's seed, so corruption draws, parameter
    // initialization, batch order, and evaluation masks are identical
    // across axis values and a comparison isolates the configuration
    // change itself.
    TrainConfig tc = train_base;
    if (axis == AblationAxis::KlLoss) {
        tc.kl_weight = value ? (train_base.kl_weight > 0.0 ? train_base.kl_weight : 1.0) : 0.0;
    }

    Scenario sc = generate(scfg);
    const TrafficSeriesTensor& full = sc.truth;
    DatasetSplit split = split_by_days(full.D());
    TrafficSeriesTensor train_truth = select_days(full, split.train_days);
    TrafficSeriesTensor val_truth = select_days(full, split.val_days);
    TrafficSeriesTensor test_truth = select_days(full, split.test_days);

    ModelConfig mc = model_base;
    mc.S = full.S();
    mc.L = full.L();
    mc.M = full.M();
    if (axis == AblationAxis::SemanticLabels) mc.semantic_labels = value;
    mc.validate();

    // Edges: geography always; profile-pattern links unless ablated away.
    EdgeSet edges = geography_edges(sc.network);
    const bool want_pattern = !(axis == AblationAxis::PatternEdges && value == 0);
    if (want_pattern) {
        const int neighbors = axis == AblationAxis::PatternNeighbors ? value : 5;
        EdgeSet pattern = pattern_edges(train_truth, split, default_cluster_count(full.S()),
                                        neighbors, tc.seed);
        edges = merge_edges(edges, pattern);
    }

    // Embeddings from metadata only (topology and calendar, no traffic).
    Tensor p_train, p_val, p_test;
    if (mc.semantic_enabled()) {
        std::vector<SemanticDescription> corpus;
        corpus.reserve(static_cast<std::size_t>(full.K()) * full.S());
        for (int k = 0; k < full.K(); ++k) {
            for (int s = 0; s < full.S(); ++s) {
                corpus.push_back(describe(k, s, sc.network, full.calendar, full.M(), full.K()));
            }
        }
        EmbeddingTable table = train_skipgram(corpus, mc.f_s, 5, 5,
                                              Rng::stream(tc.seed, "ablate/embed").next_u64());
        Tensor p_full = assemble_semantic_tensor(sc.network, full.calendar, full.K(), full.M(), table);
        if (mc.semantic_labels < kSemanticLabels) {
            p_full = semantic_label_prefix(p_full, mc.semantic_labels, mc.f_s);
        }
        p_train = sample_rows(p_full, samples_of_days(full, split.train_days));
        p_val = sample_rows(p_full, samples_of_days(full, split.val_days));
        p_test = sample_rows(p_full, samples_of_days(full, split.test_days));
    }

    GTTDIParams params = init_params(mc, Rng::stream(tc.seed, "ablate/init").next_u64());
    params.norm = compute_norm_stats(full, split.train_days);

    TrainResult result = train(params, train_truth, val_truth, edges, p_train, p_val, tc);

    GraphIndex graph = build_graph_index(edges, full.S());
    CellOutcome outcome;
    outcome.cell.axis = axis_name(axis);
    outcome.cell.value = value;
    outcome.cell.label = cell_label(axis, value);
    double sum_maape = 0.0, sum_rmse = 0.0;
    int n_rates = 0;
    for (int pct = 10; pct <= 90; pct += 10) {
        const double rate = pct / 100.0;
        CorruptionSpec spec;
        spec.pattern = tc.pattern;
        spec.rate = rate;
        spec.seed = Rng::stream(tc.seed, "ablate/eval").fork(static_cast<std::uint64_t>(pct)).next_u64();
        TrafficSeriesTensor corrupted = apply_mask(test_truth, corrupt_mask(test_truth, spec));
        Tensor completed = impute(result.params, graph, corrupted, p_test);
        std::vector<std::uint8_t> sel = imputed_cells(test_truth, corrupted.mask);
        MetricsRow row;
        row.method = outcome.cell.label;
        row.pattern = pattern_name(tc.pattern);
        row.rate = rate;
        row.maape_value = maape(test_truth.values, completed, sel);
        row.rmse_value = rmse(test_truth.values, completed, sel);
        row.seed = tc.seed;
        sum_maape += row.maape_value;
        sum_rmse += row.rmse_value;
        ++n_rates;
        outcome.rows.push_back(std::move(row));
    }
    outcome.cell.avg_maape = sum_maape / n_rates;
    outcome.cell.avg_rmse = sum_rmse / n_rates;
    return outcome;
}

} // namespace

AblationReport ablate(const ScenarioConfig& scenario, AblationAxis axis, const ModelConfig& model_base,
                      const TrainConfig& train_base, std::vector<int> values, int n_threads) {
    if (values.empty()) values = default_axis_values(axis);
    for (int v : values) validate_axis_value(axis, v);

    std::vector<CellOutcome> outcomes(values.size());
    std::vector<std::string> errors(values.size());
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const int workers = n_threads > 0 ? n_threads
                                      : static_cast<int>(std::min<std::size_t>(values.size(), hw));

    std::vector<std::thread> pool;
    auto run_range = [&](std::size_t begin, std::size_t stride) {
        for (std::size_t i = begin; i < values.size(); i += stride) {
            try {
                outcomes[i] = run_cell(scenario, axis, values[i], model_base, train_base);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    if (workers <= 1) {
        run_range(0, 1);
    } else {
        for (int w = 0; w < workers; ++w) pool.emplace_back(run_range, static_cast<std::size_t>(w), static_cast<std::size_t>(workers));
        for (auto& t : pool) t.join();
    }

    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!errors[i].empty()) {
            throw std::runtime_error("ablation cell " + cell_label(axis, values[i]) +
                                     " failed: " + errors[i]);
        }
    }

    AblationReport report;
    for (CellOutcome& o : outcomes) {
        report.cells.push_back(o.cell);
        for (MetricsRow& r : o.rows) report.per_rate.rows.push_back(std::move(r));
    }
    report.per_rate.validate();
    return report;
}

void save_ablation_jsonl(const AblationReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open report for writing: " + path);
    for (const AblationCell& c : report.cells) {
        nlohmann::ordered_json j;
        j["axis"] = c.axis;
        j["value"] = c.value;
        j["label"] = c.label;
        j["avg_maape"] = c.avg_maape;
        j["avg_rmse"] = c.avg_rmse;
        os << j.dump() << "\n";
    }
    for (const MetricsRow& r : report.per_rate.rows) {
        nlohmann::ordered_json j;
        j["method"] = r.method;
        j["pattern"] = r.pattern;
        j["rate"] = r.rate;
        j["maape"] = r.maape_value;
        j["rmse"] = r.rmse_value;
        j["wall_seconds"] = r.wall_seconds;
        j["seed"] = r.seed;
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("failed writing report: " + path);
}

} // namespace gttdi
