#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gttdi/evaluation.hpp"
#include "gttdi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace gttdi;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/gttdi_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

TrafficSeriesTensor make_series(int D, int S, int N, int M, std::uint64_t seed) {
    TrafficSeriesTensor t;
    t.values = Tensor({D, S, N});
    t.mask.assign(static_cast<std::size_t>(t.values.numel()), 1);
    t.interval_minutes = 1440 / N;
    t.slices_per_day = 1;
    t.units = Units::Flow;
    t.calendar.start = {2013, 1, 1};
    Rng rng(seed);
    for (auto& v : t.values.data) v = rng.uniform(10.0, 200.0);
    return M > 1 ? reslice(t, M) : t;
}

void drop(TrafficSeriesTensor& t, int k, int s, int l) {
    t.mask[static_cast<std::size_t>(t.flat(k, s, l))] = 0;
    t.values.data[static_cast<std::size_t>(t.flat(k, s, l))] = 0.0;
}

} // namespace

TEST_CASE("maape and rmse match element loops") {
    Rng rng(4);
    Tensor truth({3, 4, 5});
    Tensor pred({3, 4, 5});
    std::vector<std::uint8_t> sel(static_cast<std::size_t>(truth.numel()));
    for (std::int64_t i = 0; i < truth.numel(); ++i) {
        truth.data[static_cast<std::size_t>(i)] = rng.uniform(-50.0, 150.0);
        pred.data[static_cast<std::size_t>(i)] = rng.uniform(-50.0, 150.0);
        sel[static_cast<std::size_t>(i)] = rng.bernoulli(0.6) ? 1 : 0;
    }
    double sum_at = 0.0, sum_sq = 0.0;
    int n = 0;
    for (std::int64_t i = 0; i < truth.numel(); ++i) {
        if (!sel[static_cast<std::size_t>(i)]) continue;
        const double y = truth.data[static_cast<std::size_t>(i)];
        const double yh = pred.data[static_cast<std::size_t>(i)];
        sum_at += y == 0.0 ? (yh == 0.0 ? 0.0 : std::numbers::pi / 2) : std::atan(std::abs(y - yh) / std::abs(y));
        sum_sq += (y - yh) * (y - yh);
        ++n;
    }
    CHECK(maape(truth, pred, sel) == doctest::Approx(sum_at / n).epsilon(1e-12));
    CHECK(rmse(truth, pred, sel) == doctest::Approx(std::sqrt(sum_sq / n)).epsilon(1e-12));
}

TEST_CASE("maape handles zero truth and stays bounded") {
    Tensor truth({1, 4}, {100.0, 0.0, 0.0, 50.0});
    Tensor pred({1, 4}, {0.0, 0.0, 7.0, 50.0});
    std::vector<std::uint8_t> all(4, 1);
    // A full miss of a positive value contributes atan(1) = pi/4.
    CHECK(maape(truth, pred, {1, 0, 0, 0}) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-15));
    // Zero truth met exactly contributes 0, missed contributes pi/2.
    CHECK(maape(truth, pred, {0, 1, 0, 0}) == 0.0);
    CHECK(maape(truth, pred, {0, 0, 1, 0}) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
    const double m = maape(truth, pred, all);
    CHECK(m >= 0.0);
    CHECK(m <= std::numbers::pi / 2);
    CHECK(rmse(truth, pred, {0, 0, 0, 1}) == 0.0);
}

TEST_CASE("metrics reject empty or mismatched selections") {
    Tensor a({2, 2}, 1.0);
    Tensor b({2, 2}, 2.0);
    CHECK_THROWS_AS(maape(a, b, {0, 0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(rmse(a, b, {0, 0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(maape(a, b, {1, 1}), std::invalid_argument);
    Tensor c({2, 3}, 2.0);
    CHECK_THROWS_AS(maape(a, c, std::vector<std::uint8_t>(6, 1)), std::invalid_argument);
}

TEST_CASE("imputed cells are truth-observed and input-missing") {
    TrafficSeriesTensor t = make_series(2, 1, 2, 1, 1);
    drop(t, 1, 0, 1); // truth itself lacks this entry
    std::vector<std::uint8_t> corrupted = t.mask;
    corrupted[0] = 0; // dropped by the corruption
    corrupted[3] = 0; // was already missing in the truth
    std::vector<std::uint8_t> sel = imputed_cells(t, corrupted);
    CHECK(sel == std::vector<std::uint8_t>{1, 0, 0, 0});
    CHECK_THROWS_AS(imputed_cells(t, {1, 1}), std::invalid_argument);
}

TEST_CASE("historical average fills from the day mean with sensor and global fallbacks") {
    TrafficSeriesTensor t = make_series(3, 3, 2, 1, 7);
    // Sensor 0: one missing cell, observed on the other days.
    const double d1 = t.value(1, 0, 0), d2 = t.value(2, 0, 0);
    drop(t, 0, 0, 0);
    // Sensor 1: point 1 missing on every day; the sensor mean remains.
    double s1_sum = 0.0;
    for (int d = 0; d < 3; ++d) {
        drop(t, d, 1, 1);
        s1_sum += t.value(d, 1, 0);
    }
    // Sensor 2: never observed at all; only the global mean remains.
    double global_sum = d1 + d2 + s1_sum;
    int global_n = 5;
    for (int d = 0; d < 3; ++d) {
        if (d > 0) {
            global_sum += t.value(d, 0, 1);
            ++global_n;
        }
        for (int l = 0; l < 2; ++l) drop(t, d, 2, l);
    }
    drop(t, 0, 0, 1); // keep sensor 0 partially observed at point 1

    Tensor out = ha_impute(t);
    CHECK(out.data[static_cast<std::size_t>(t.flat(0, 0, 0))] == doctest::Approx((d1 + d2) / 2).epsilon(1e-12));
    CHECK(out.data[static_cast<std::size_t>(t.flat(2, 1, 1))] == doctest::Approx(s1_sum / 3).epsilon(1e-12));
    CHECK(out.data[static_cast<std::size_t>(t.flat(1, 2, 0))] ==
          doctest::Approx(global_sum / global_n).epsilon(1e-12));
    // Observed entries never move.
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        if (t.mask[static_cast<std::size_t>(i)]) {
            CHECK(out.data[static_cast<std::size_t>(i)] == t.values.data[static_cast<std::size_t>(i)]);
        }
    }

    TrafficSeriesTensor empty = make_series(2, 2, 2, 1, 3);
    for (int k = 0; k < 2; ++k)
        for (int s = 0; s < 2; ++s)
            for (int l = 0; l < 2; ++l) drop(empty, k, s, l);
    CHECK_THROWS_AS(ha_impute(empty), std::invalid_argument);
}

TEST_CASE("historical average respects the slice structure") {
    // Two slices per day: the same point index in different slices must
    // average over different day sets.
    TrafficSeriesTensor t = make_series(4, 1, 4, 2, 11);
    // Samples alternate slice 0 / slice 1; drop (day 0, slice 0, point 0).
    drop(t, 0, 0, 0);
    double expect = 0.0;
    for (int d = 1; d < 4; ++d) expect += t.value(2 * d, 0, 0); // same slice on later days
    expect /= 3;
    Tensor out = ha_impute(t);
    CHECK(out.data[static_cast<std::size_t>(t.flat(0, 0, 0))] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("nearest-neighbor imputation matches a brute-force oracle") {
    TrafficSeriesTensor t = make_series(6, 2, 5, 1, 21);
    Rng rng(31);
    for (int k = 0; k < 6; ++k)
        for (int s = 0; s < 2; ++s)
            for (int l = 0; l < 5; ++l)
                if (rng.bernoulli(0.3)) drop(t, k, s, l);

    const int kn = 3;
    Tensor got = knn_impute(t, kn);
    Tensor ha = ha_impute(t);

    for (int s = 0; s < 2; ++s) {
        for (int ki = 0; ki < 6; ++ki) {
            std::vector<std::pair<double, int>> cand;
            for (int kj = 0; kj < 6; ++kj) {
                if (kj == ki) continue;
                double acc = 0.0;
                int shared = 0;
                for (int l = 0; l < 5; ++l) {
                    if (t.observed(ki, s, l) && t.observed(kj, s, l)) {
                        const double d = t.value(ki, s, l) - t.value(kj, s, l);
                        acc += d * d;
                        ++shared;
                    }
                }
                if (shared > 0) cand.emplace_back(std::sqrt(acc / shared), kj);
            }
            std::sort(cand.begin(), cand.end());
            const int take = std::min<int>(kn, static_cast<int>(cand.size()));
            for (int l = 0; l < 5; ++l) {
                const auto idx = static_cast<std::size_t>(t.flat(ki, s, l));
                if (t.observed(ki, s, l)) {
                    CHECK(got.data[idx] == t.value(ki, s, l));
                    continue;
                }
                double acc = 0.0;
                int n = 0;
                for (int c = 0; c < take; ++c) {
                    const int kj = cand[static_cast<std::size_t>(c)].second;
                    if (t.observed(kj, s, l)) {
                        acc += t.value(kj, s, l);
                        ++n;
                    }
                }
                const double expect = n > 0 ? acc / n : ha.data[idx];
                CHECK(got.data[idx] == doctest::Approx(expect).epsilon(1e-12));
            }
        }
    }
    CHECK_THROWS_AS(knn_impute(t, 0), std::invalid_argument);
}

TEST_CASE("nearest-neighbor imputation falls back when no sample is comparable") {
    // Sample 0 observes only point 0, every other sample misses point 0,
    // so no candidate shares a coordinate and the historical average stays.
    TrafficSeriesTensor t = make_series(3, 1, 2, 1, 5);
    drop(t, 0, 0, 1);
    drop(t, 1, 0, 0);
    drop(t, 2, 0, 0);
    Tensor got = knn_impute(t, 2);
    Tensor ha = ha_impute(t);
    CHECK(got.data[static_cast<std::size_t>(t.flat(0, 0, 1))] ==
          ha.data[static_cast<std::size_t>(t.flat(0, 0, 1))]);
}

TEST_CASE("metric reports round-trip and serialize byte-stably") {
    MetricsReport rep;
    rep.rows.push_back({"gt-tdi", "rm", 0.5, 0.21, 12.5, 0.0, 42});
    rep.rows.push_back({"ha", "nm", 0.3, 0.35, 20.25, 0.0, 7});
    TempFile f1("report1.jsonl"), f2("report2.jsonl");
    save_report_jsonl(rep, f1.path);
    save_report_jsonl(rep, f2.path);
    CHECK(slurp(f1.path) == slurp(f2.path));
    CHECK(!slurp(f1.path).empty());

    MetricsReport back = load_report_jsonl(f1.path);
    REQUIRE(back.rows.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back.rows[i].method == rep.rows[i].method);
        CHECK(back.rows[i].pattern == rep.rows[i].pattern);
        CHECK(back.rows[i].rate == rep.rows[i].rate);
        CHECK(back.rows[i].maape_value == rep.rows[i].maape_value);
        CHECK(back.rows[i].rmse_value == rep.rows[i].rmse_value);
        CHECK(back.rows[i].seed == rep.rows[i].seed);
    }

    TempFile t("report.txt");
    save_report_table(rep, t.path);
    const std::string table = slurp(t.path);
    CHECK(table.find("method") != std::string::npos);
    CHECK(table.find("gt-tdi") != std::string::npos);
    CHECK_THROWS_AS(load_report_jsonl("/nonexistent/report.jsonl"), std::runtime_error);
}

TEST_CASE("reports reject out-of-range metrics") {
    MetricsReport rep;
    rep.rows.push_back({"gt-tdi", "rm", 0.5, 2.0, 1.0, 0.0, 1}); // beyond pi/2
    CHECK_THROWS_AS(rep.validate(), std::invalid_argument);
    rep.rows[0] = {"gt-tdi", "rm", 0.5, 0.2, -1.0, 0.0, 1};
    CHECK_THROWS_AS(rep.validate(), std::invalid_argument);
    rep.rows[0] = {"gt-tdi", "rm", 1.5, 0.2, 1.0, 0.0, 1};
    CHECK_THROWS_AS(rep.validate(), std::invalid_argument);
    rep.rows[0] = {"", "rm", 0.5, 0.2, 1.0, 0.0, 1};
    CHECK_THROWS_AS(rep.validate(), std::invalid_argument);
}

TEST_CASE("ablation axes have stable names and defaults") {
    for (AblationAxis a : {AblationAxis::SemanticLabels, AblationAxis::Slices, AblationAxis::KlLoss,
                           AblationAxis::PatternEdges, AblationAxis::PatternNeighbors}) {
        CHECK(axis_from_name(axis_name(a)) == a);
        CHECK(!default_axis_values(a).empty());
    }
    CHECK_THROWS_AS(axis_from_name("widths"), std::invalid_argument);
    CHECK(default_axis_values(AblationAxis::SemanticLabels).size() == 9);
    CHECK(default_axis_values(AblationAxis::KlLoss) == std::vector<int>{0, 1});
}

TEST_CASE("ablation runs identically on one and two worker threads") {
    ScenarioConfig scfg;
    scfg.n_sensors = 4;
    scfg.n_days = 6;
    scfg.points_per_day = 12;
    scfg.slices = 2;
    scfg.topology = Topology::Chain;
    scfg.seed = 2;

    ModelConfig mc;
    mc.semantic_labels = 0;
    mc.f_s = 0;
    mc.H_P = 0;
    mc.g1_heads = 2;
    mc.g1_dim = 2;
    mc.g2_heads = 2;
    mc.H_G = 4;
    mc.encoder_heads = 2;
    mc.encoder_ff = 8;
    mc.output_hidden = 4;

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 19;

    AblationReport seq = ablate(scfg, AblationAxis::KlLoss, mc, tc, {}, 1);
    AblationReport par = ablate(scfg, AblationAxis::KlLoss, mc, tc, {}, 2);

    REQUIRE(seq.cells.size() == 2);
    REQUIRE(seq.per_rate.rows.size() == 18); // 2 cells x 9 rates
    REQUIRE(par.cells.size() == seq.cells.size());
    for (std::size_t i = 0; i < seq.cells.size(); ++i) {
        CHECK(par.cells[i].label == seq.cells[i].label);
        CHECK(par.cells[i].avg_maape == seq.cells[i].avg_maape);
        CHECK(par.cells[i].avg_rmse == seq.cells[i].avg_rmse);
    }
    for (std::size_t i = 0; i < seq.per_rate.rows.size(); ++i) {
        CHECK(par.per_rate.rows[i].maape_value == seq.per_rate.rows[i].maape_value);
    }

    // The per-cell average is the mean of its nine per-rate rows.
    CHECK(seq.cells[0].label == "kl-off");
    CHECK(seq.cells[1].label == "kl-on");
    for (const AblationCell& c : seq.cells) {
        double acc = 0.0;
        int n = 0;
        for (const MetricsRow& r : seq.per_rate.rows) {
            if (r.method == c.label) {
                acc += r.maape_value;
                ++n;
            }
        }
        CHECK(n == 9);
        CHECK(c.avg_maape == doctest::Approx(acc / 9).epsilon(1e-12));
    }

    TempFile f("ablation.jsonl");
    save_ablation_jsonl(seq, f.path);
    std::ifstream is(f.path);
    int lines = 0;
    std::string line;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 2 + 18);
}

TEST_CASE("ablation rejects invalid axis values") {
    ScenarioConfig scfg;
    ModelConfig mc;
    TrainConfig tc;
    CHECK_THROWS_AS(ablate(scfg, AblationAxis::SemanticLabels, mc, tc, {9}, 1), std::invalid_argument);
    CHECK_THROWS_AS(ablate(scfg, AblationAxis::PatternNeighbors, mc, tc, {0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(ablate(scfg, AblationAxis::KlLoss, mc, tc, {2}, 1), std::invalid_argument);
}
