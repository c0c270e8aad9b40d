#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gttdi/evaluation.hpp"
#include "gttdi/ops.hpp"
#include "gttdi/scenario.hpp"
#include "gttdi/semantic_embedding.hpp"
#include "gttdi/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
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

// Model small enough for whole-network tests, semantic module off.
ModelConfig plain_config(int S, int L, int M) {
    ModelConfig mc;
    mc.S = S;
    mc.L = L;
    mc.M = M;
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
    return mc;
}

EdgeSet chain_edges(int S) {
    EdgeSet e;
    e.n_sensors = S;
    for (int i = 0; i + 1 < S; ++i) {
        e.pairs.emplace_back(i, i + 1);
        e.features.push_back({1.0, 0.0, 1.0});
        e.pairs.emplace_back(i + 1, i);
        e.features.push_back({1.0, 0.0, 1.0});
    }
    return e;
}

// Train/val tensors plus normalization from a tiny synthetic scenario.
struct TinySetup {
    TrafficSeriesTensor train_truth, val_truth;
    EdgeSet edges;
    GTTDIParams params;
};

TinySetup tiny_setup(std::uint64_t seed) {
    ScenarioConfig cfg;
    cfg.n_sensors = 4;
    cfg.n_days = 6;
    cfg.points_per_day = 12;
    cfg.slices = 2;
    cfg.topology = Topology::Chain;
    cfg.seed = seed;
    Scenario sc = generate(cfg);
    DatasetSplit split = split_by_days(sc.truth.D());
    TinySetup s;
    s.train_truth = select_days(sc.truth, split.train_days);
    s.val_truth = select_days(sc.truth, split.val_days);
    s.edges = chain_edges(4);
    s.params = init_params(plain_config(4, 6, 2), seed);
    s.params.norm = compute_norm_stats(sc.truth, split.train_days);
    return s;
}

double eval_loss_scalar(Var v) { return v.value().data[0]; }

} // namespace

TEST_CASE("masked mse matches an element loop and ignores observed entries") {
    Tape tape;
    Tensor pv({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    Tensor tv({2, 3}, {1.5, 2.0, 2.0, 7.0, 5.0, 5.5});
    std::vector<std::uint8_t> observed = {1, 0, 0, 1, 1, 0};
    Var p = tape.leaf(pv, true);
    Var t = tape.constant(tv);
    Var loss = masked_mse(p, t, observed);

    double expect = 0.0;
    int n = 0;
    for (int i = 0; i < 6; ++i) {
        if (observed[static_cast<std::size_t>(i)]) continue;
        const double d = pv.data[static_cast<std::size_t>(i)] - tv.data[static_cast<std::size_t>(i)];
        expect += d * d;
        ++n;
    }
    expect /= n;
    CHECK(eval_loss_scalar(loss) == doctest::Approx(expect).epsilon(1e-12));

    // Loss gradient: 2(p - t)/n at penalized entries, exactly 0 elsewhere.
    tape.backward(loss);
    const Tensor& g = p.grad();
    for (int i = 0; i < 6; ++i) {
        const double want = observed[static_cast<std::size_t>(i)]
                                ? 0.0
                                : 2.0 * (pv.data[static_cast<std::size_t>(i)] - tv.data[static_cast<std::size_t>(i)]) / n;
        CHECK(g.data[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("masked mse is invariant to the prediction at observed entries") {
    Tensor tv({2, 2}, {1.0, 2.0, 3.0, 4.0});
    std::vector<std::uint8_t> observed = {1, 0, 1, 0};
    Tensor pv({2, 2}, {9.0, 2.5, -3.0, 4.5});
    Tape tape1;
    const double base = eval_loss_scalar(masked_mse(tape1.leaf(pv, false), tape1.constant(tv), observed));
    pv.data[0] = -100.0; // observed entries may move freely
    pv.data[2] = 55.0;
    Tape tape2;
    const double moved = eval_loss_scalar(masked_mse(tape2.leaf(pv, false), tape2.constant(tv), observed));
    CHECK(base == moved);

    // Fully observed input produces a gradient-free zero.
    Tape tape3;
    Var zero = masked_mse(tape3.leaf(pv, true), tape3.constant(tv), {1, 1, 1, 1});
    CHECK(eval_loss_scalar(zero) == 0.0);
}

TEST_CASE("masked mse rejects mismatched inputs") {
    Tape tape;
    Var a = tape.leaf(Tensor({2, 2}, 1.0), false);
    Var b = tape.leaf(Tensor({2, 3}, 1.0), false);
    CHECK_THROWS_AS(masked_mse(a, b, std::vector<std::uint8_t>(4, 1)), std::invalid_argument);
    Var c = tape.leaf(Tensor({2, 2}, 1.0), false);
    CHECK_THROWS_AS(masked_mse(a, c, std::vector<std::uint8_t>(3, 1)), std::invalid_argument);
}

TEST_CASE("distribution loss is zero for identical rows and ln 2 for a halved mass") {
    Tape tape;
    Tensor same({2, 4}, {1.0, 2.0, 3.0, 4.0, 4.0, 3.0, 2.0, 1.0});
    Var zero = kl_divergence_loss(tape.leaf(same, false), tape.constant(same));
    CHECK(std::abs(eval_loss_scalar(zero)) < 1e-12);

    // Truth puts all mass on the first cell, the prediction splits it.
    Tensor truth({1, 2}, {1.0, 0.0});
    Tensor pred({1, 2}, {0.5, 0.5});
    Var l = kl_divergence_loss(tape.leaf(pred, false), tape.constant(truth));
    CHECK(eval_loss_scalar(l) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("distribution loss is non-negative and scale-invariant per row") {
    Tape tape;
    Tensor truth({3, 4});
    Tensor pred({3, 4});
    Rng rng(17);
    for (auto& v : truth.data) v = rng.uniform(0.1, 2.0);
    for (auto& v : pred.data) v = rng.uniform(0.1, 2.0);
    const double base = eval_loss_scalar(kl_divergence_loss(tape.leaf(pred, false), tape.constant(truth)));
    CHECK(base >= 0.0);

    // Row normalization removes any positive per-row scale.
    Tensor scaled = pred;
    for (int c = 0; c < 4; ++c) {
        scaled.data[static_cast<std::size_t>(c)] *= 7.5;
        scaled.data[static_cast<std::size_t>(8 + c)] *= 0.25;
    }
    Tape tape2;
    const double rescaled =
        eval_loss_scalar(kl_divergence_loss(tape2.leaf(scaled, false), tape2.constant(truth)));
    CHECK(rescaled == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("distribution loss gradient agrees with finite differences") {
    Tensor truth({2, 3}, {1.0, 0.4, 0.2, 0.3, 0.9, 1.1});
    Tensor pred({2, 3}, {0.7, 0.5, 0.3, 0.8, 0.2, 0.6});
    Tape tape;
    Var p = tape.leaf(pred, true);
    Var loss = kl_divergence_loss(p, tape.constant(truth));
    tape.backward(loss);
    const Tensor analytic = p.grad();

    const double h = 1e-6;
    for (int i = 0; i < 6; ++i) {
        Tensor up = pred, down = pred;
        up.data[static_cast<std::size_t>(i)] += h;
        down.data[static_cast<std::size_t>(i)] -= h;
        Tape t1, t2;
        const double lu = eval_loss_scalar(kl_divergence_loss(t1.leaf(up, false), t1.constant(truth)));
        const double ld = eval_loss_scalar(kl_divergence_loss(t2.leaf(down, false), t2.constant(truth)));
        const double numeric = (lu - ld) / (2.0 * h);
        CHECK(analytic.data[static_cast<std::size_t>(i)] == doctest::Approx(numeric).epsilon(1e-5));
    }
}

TEST_CASE("adam follows the textbook update") {
    ModelConfig mc = plain_config(2, 2, 1);
    GTTDIParams params;
    params.config = mc;
    params.tensors["w"] = Tensor({3}, {1.0, -2.0, 0.5});

    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    Adam opt(lr, b1, b2, eps);

    // Independent trace of the same arithmetic.
    std::vector<double> p = {1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
    std::vector<Tensor> grads = {Tensor({3}, {0.3, -0.1, 0.0}), Tensor({3}, {-0.2, 0.4, 1.0})};
    for (int t = 1; t <= 2; ++t) {
        const Tensor& g = grads[static_cast<std::size_t>(t - 1)];
        opt.step(params, {{"w", g}});
        for (int i = 0; i < 3; ++i) {
            const double gi = g.data[static_cast<std::size_t>(i)];
            m[static_cast<std::size_t>(i)] = b1 * m[static_cast<std::size_t>(i)] + (1 - b1) * gi;
            v[static_cast<std::size_t>(i)] = b2 * v[static_cast<std::size_t>(i)] + (1 - b2) * gi * gi;
            const double mhat = m[static_cast<std::size_t>(i)] / (1 - std::pow(b1, t));
            const double vhat = v[static_cast<std::size_t>(i)] / (1 - std::pow(b2, t));
            p[static_cast<std::size_t>(i)] -= lr * mhat / (std::sqrt(vhat) + eps);
            CHECK(params.tensors["w"].data[static_cast<std::size_t>(i)] ==
                  doctest::Approx(p[static_cast<std::size_t>(i)]).epsilon(1e-14));
        }
        CHECK(opt.steps_taken() == t);
    }

    CHECK_THROWS_AS(opt.step(params, {{"missing", Tensor({3}, 0.0)}}), std::invalid_argument);
    CHECK_THROWS_AS(opt.step(params, {{"w", Tensor({2}, 0.0)}}), std::invalid_argument);
    CHECK_THROWS_AS(Adam(0.0), std::invalid_argument);
    CHECK_THROWS_AS(Adam(0.1, 1.0), std::invalid_argument);
}

TEST_CASE("train config rejects out-of-range values") {
    TrainConfig tc;
    tc.epochs = 1;
    tc.validate();
    TrainConfig bad = tc;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tc;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tc;
    bad.kl_weight = -0.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tc;
    bad.dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tc;
    bad.patience = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = tc;
    bad.val_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero epochs return the initial parameters untouched") {
    TinySetup s = tiny_setup(11);
    TrainConfig tc;
    tc.epochs = 0;
    TrainResult r = train(s.params, s.train_truth, s.val_truth, s.edges, {}, {}, tc);
    CHECK(r.best_epoch == -1);
    CHECK(r.log.empty());
    for (const auto& [name, t] : s.params.tensors) {
        CHECK(r.params.tensors.at(name).data == t.data);
    }
}

TEST_CASE("training is deterministic given the seed") {
    TinySetup s = tiny_setup(21);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 4;
    tc.seed = 77;
    TrainResult a = train(s.params, s.train_truth, s.val_truth, s.edges, {}, {}, tc);
    TrainResult b = train(s.params, s.train_truth, s.val_truth, s.edges, {}, {}, tc);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_mse == b.log[i].train_mse);
        CHECK(a.log[i].val_maape == b.log[i].val_maape);
        CHECK(a.log[i].val_rmse == b.log[i].val_rmse);
    }
    CHECK(a.best_epoch == b.best_epoch);
    for (const auto& [name, t] : a.params.tensors) {
        CHECK(b.params.tensors.at(name).data == t.data);
    }

    TrainConfig other = tc;
    other.seed = 78;
    TrainResult c = train(s.params, s.train_truth, s.val_truth, s.edges, {}, {}, other);
    CHECK(c.log.front().train_mse != a.log.front().train_mse);
}

TEST_CASE("a few epochs reduce the training objective") {
    TinySetup s = tiny_setup(5);
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 4;
    tc.learning_rate = 3e-3;
    tc.seed = 1;
    TrainResult r = train(s.params, s.train_truth, s.val_truth, s.edges, {}, {}, tc);
    REQUIRE(r.log.size() == 8);
    CHECK(r.log.back().train_mse < r.log.front().train_mse);
    CHECK(r.best_epoch >= 0);
    for (const EpochRecord& e : r.log) {
        CHECK(std::isfinite(e.train_mse));
        CHECK(std::isfinite(e.train_kl));
        CHECK(e.val_maape >= 0.0);
        CHECK(e.val_maape <= std::atan(1.0) * 2.0 + 1e-12);
        CHECK(e.wall_ms >= 0.0);
    }
    // The kept parameters realize the logged best epoch.
    double best = r.log.front().val_maape;
    int best_epoch = 0;
    for (const EpochRecord& e : r.log) {
        if (e.val_maape < best) {
            best = e.val_maape;
            best_epoch = e.epoch;
        }
    }
    CHECK(r.best_epoch == best_epoch);
}

TEST_CASE("patience stops training early") {
    TinySetup s = tiny_setup(13);
    TrainConfig tc;
    tc.epochs = 60;
    tc.batch_size = 4;
    tc.patience = 2;
    tc.seed = 3;
    TrainResult r = train(s.params, s.train_truth, s.val_truth, s.edges, {}, {}, tc);
    CHECK(r.log.size() < 60);
    CHECK(r.best_epoch + tc.patience + 1 >= static_cast<int>(r.log.size()));
}

TEST_CASE("training covers the semantic branch") {
    ScenarioConfig cfg;
    cfg.n_sensors = 4;
    cfg.n_days = 6;
    cfg.points_per_day = 12;
    cfg.slices = 2;
    cfg.topology = Topology::Chain;
    cfg.seed = 9;
    Scenario sc = generate(cfg);
    DatasetSplit split = split_by_days(sc.truth.D());
    TrafficSeriesTensor train_truth = select_days(sc.truth, split.train_days);
    TrafficSeriesTensor val_truth = select_days(sc.truth, split.val_days);

    ModelConfig mc = plain_config(4, 6, 2);
    mc.semantic_labels = 8;
    mc.f_s = 2;
    mc.H_P = 4;
    mc.conv_channels = 2;
    mc.conv_kernel = 3;
    GTTDIParams params = init_params(mc, 9);
    params.norm = compute_norm_stats(sc.truth, split.train_days);

    EmbeddingTable table =
        hash_embedding_table(build_vocabulary(sc.network, sc.truth.calendar, sc.truth.M(), sc.truth.K()), mc.f_s);
    Tensor p_train = assemble_semantic_tensor(sc.network, train_truth.calendar, train_truth.K(),
                                              train_truth.M(), table);
    Tensor p_val =
        assemble_semantic_tensor(sc.network, val_truth.calendar, val_truth.K(), val_truth.M(), table);

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.seed = 4;
    TrainResult r = train(params, train_truth, val_truth, chain_edges(4), p_train, p_val, tc);
    CHECK(r.log.size() == 2);
    CHECK(std::isfinite(r.log.back().val_maape));

    // Semantic rows of the wrong width are rejected up front.
    Tensor bad({train_truth.K(), 4, 3}, 0.0);
    CHECK_THROWS_AS(train(params, train_truth, val_truth, chain_edges(4), bad, p_val, tc),
                    std::invalid_argument);
}

TEST_CASE("train rejects mismatched tensors and degenerate normalization") {
    TinySetup s = tiny_setup(31);
    TrainConfig tc;
    tc.epochs = 1;
    ScenarioConfig other;
    other.n_sensors = 5;
    other.n_days = 3;
    other.points_per_day = 12;
    other.slices = 2;
    other.topology = Topology::Chain;
    Scenario wrong = generate(other);
    CHECK_THROWS_AS(train(s.params, wrong.truth, s.val_truth, s.edges, {}, {}, tc), std::invalid_argument);

    GTTDIParams degenerate = s.params;
    degenerate.norm = NormStats{};
    degenerate.norm.vmin = degenerate.norm.vmax = 1.0;
    CHECK_THROWS_AS(train(degenerate, s.train_truth, s.val_truth, s.edges, {}, {}, tc),
                    std::invalid_argument);
}

TEST_CASE("train log round-trips through the line format") {
    TempFile f("train_log.jsonl");
    std::vector<EpochRecord> log(2);
    log[0] = {0, 0.5, 0.1, 0.4, 12.0, 3.25};
    log[1] = {1, 0.25, 0.05, 0.3, 9.0, 3.5};
    save_train_log(log, f.path);
    std::ifstream is(f.path);
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        CHECK(line.find("\"epoch\":" + std::to_string(n)) != std::string::npos);
        CHECK(line.find("val_maape") != std::string::npos);
        ++n;
    }
    CHECK(n == 2);
}

TEST_CASE("impute copies observed entries bit-exactly and fills the rest") {
    TinySetup s = tiny_setup(41);
    GraphIndex graph = build_graph_index(s.edges, 4);

    CorruptionSpec spec;
    spec.rate = 0.4;
    spec.seed = 8;
    TrafficSeriesTensor corrupted = apply_mask(s.val_truth, corrupt_mask(s.val_truth, spec));
    Tensor completed = impute(s.params, graph, corrupted, {});
    REQUIRE(completed.same_shape(s.val_truth.values));
    int n_missing = 0;
    for (std::int64_t i = 0; i < completed.numel(); ++i) {
        if (corrupted.mask[static_cast<std::size_t>(i)]) {
            CHECK(completed.data[static_cast<std::size_t>(i)] ==
                  corrupted.values.data[static_cast<std::size_t>(i)]);
        } else {
            CHECK(std::isfinite(completed.data[static_cast<std::size_t>(i)]));
            ++n_missing;
        }
    }
    CHECK(n_missing > 0);
}

TEST_CASE("whole-network gradients pass central finite differences") {
    ModelConfig mc;
    mc.S = 3;
    mc.L = 4;
    mc.M = 1;
    mc.semantic_labels = 2;
    mc.f_s = 2;
    mc.H_P = 4;
    mc.conv_channels = 2;
    mc.conv_kernel = 3;
    mc.g1_heads = 2;
    mc.g1_dim = 2;
    mc.g2_heads = 2;
    mc.H_G = 4;
    mc.encoder_heads = 2;
    mc.encoder_ff = 8;
    mc.output_hidden = 3;
    GradCheckSummary s = check_gradients(mc, 123);
    CHECK(s.checked > 0);
    CHECK(s.max_rel < 1e-4);
    CHECK(s.seconds >= 0.0);
    INFO("worst coordinate ", s.worst, " rel ", s.max_rel);
}
