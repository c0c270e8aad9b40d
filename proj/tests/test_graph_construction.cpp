#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gttdi/graph_construction.hpp"
#include "gttdi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

using namespace gttdi;

namespace {

RoadNetwork chain_network(std::vector<double> positions) {
    RoadNetwork net;
    for (std::size_t i = 0; i < positions.size(); ++i)
        net.sensors.push_back({"s" + std::to_string(i), "r1", positions[i], Direction::East});
    for (std::size_t i = 0; i + 1 < positions.size(); ++i)
        net.segments.emplace_back(static_cast<int>(i), static_cast<int>(i + 1));
    return net;
}

TrafficSeriesTensor tensor_from_profiles(const Tensor& prof, int days) {
    const int S = prof.shape[0], N = prof.shape[1];
    TrafficSeriesTensor t;
    t.values = Tensor({days, S, N});
    t.mask.assign(static_cast<std::size_t>(days) * S * N, 1);
    t.interval_minutes = 1440 / N;
    t.slices_per_day = 1;
    t.units = Units::Flow;
    t.calendar.start = {2013, 1, 1};
    for (int d = 0; d < days; ++d)
        for (int s = 0; s < S; ++s)
            for (int p = 0; p < N; ++p)
                t.values.data[static_cast<std::size_t>(t.flat(d, s, p))] = prof.at2(s, p);
    return t;
}

std::set<std::pair<int, int>> undirected_pairs(const EdgeSet& es) {
    std::set<std::pair<int, int>> out;
    for (const auto& [i, j] : es.pairs) out.insert(std::minmax(i, j));
    return out;
}

double edge_weight(const EdgeSet& es, int i, int j) {
    for (std::size_t e = 0; e < es.pairs.size(); ++e)
        if (es.pairs[e] == std::pair{i, j}) return es.features[e][2];
    FAIL("edge not found");
    return 0.0;
}

// Plain quadratic reimplementation of the neighbor rule, used as an
// oracle: same-cluster sensors by (distance, index), then the rest.
std::set<std::pair<int, int>> brute_force_pairs(const Tensor& prof,
                                                const std::vector<int>& assign, int n_neighbors) {
    const int S = prof.shape[0], N = prof.shape[1];
    auto dist = [&](int a, int b) {
        double s = 0.0;
        for (int p = 0; p < N; ++p) {
            const double d = prof.at2(a, p) - prof.at2(b, p);
            s += d * d;
        }
        return std::sqrt(s);
    };
    std::set<std::pair<int, int>> out;
    for (int i = 0; i < S; ++i) {
        std::vector<std::tuple<int, double, int>> rank; // (cluster mismatch, dist, idx)
        for (int j = 0; j < S; ++j)
            if (j != i) rank.push_back({assign[i] != assign[j], dist(i, j), j});
        std::sort(rank.begin(), rank.end());
        for (int t = 0; t < std::min<int>(n_neighbors, static_cast<int>(rank.size())); ++t)
            out.insert(std::minmax(i, std::get<2>(rank[t])));
    }
    return out;
}

} // namespace

TEST_CASE("geography edges of a three-sensor chain") {
    // A at 0, B at 1, C at 3: distances 1 and 2, so weights 1 and 0.5.
    auto es = geography_edges(chain_network({0.0, 1.0, 3.0}));
    es.validate();
    CHECK(es.W() == 4); // two undirected edges, symmetrized
    CHECK(undirected_pairs(es) == std::set<std::pair<int, int>>{{0, 1}, {1, 2}});
    CHECK(edge_weight(es, 0, 1) == doctest::Approx(1.0));
    CHECK(edge_weight(es, 1, 2) == doctest::Approx(0.5));
    CHECK(edge_weight(es, 2, 1) == doctest::Approx(0.5)); // mirror
    for (const auto& f : es.features) {
        CHECK(f[0] == 1.0); // geography bit
        CHECK(f[1] == 0.0);
        CHECK(f[2] > 0.0);
        CHECK(f[2] <= 1.0);
    }
}

TEST_CASE("geography edge corner cases") {
    RoadNetwork lone;
    lone.sensors.push_back({"only", "r1", 0.0, Direction::North});
    CHECK(geography_edges(lone).W() == 0);

    // Two parallel roads never connect.
    RoadNetwork two;
    two.sensors = {{"a0", "r1", 0.0, Direction::East},
                   {"a1", "r1", 1.0, Direction::East},
                   {"b0", "r2", 0.0, Direction::West},
                   {"b1", "r2", 1.5, Direction::West}};
    two.segments = {{0, 1}, {2, 3}};
    auto es = geography_edges(two);
    CHECK(undirected_pairs(es) == std::set<std::pair<int, int>>{{0, 1}, {2, 3}});

    auto coincident = chain_network({0.0, 0.0});
    CHECK_THROWS_AS(geography_edges(coincident), std::invalid_argument);
}

TEST_CASE("mean daily profiles ignore missing entries") {
    Tensor prof({1, 2}, {10.0, 20.0});
    auto t = tensor_from_profiles(prof, 3);
    // Hide day 0 of point 0 and shift day 1 so the mean moves.
    t.values.data[static_cast<std::size_t>(t.flat(0, 0, 0))] = 0.0;
    t.mask[static_cast<std::size_t>(t.flat(0, 0, 0))] = 0;
    t.values.data[static_cast<std::size_t>(t.flat(1, 0, 0))] = 16.0;
    auto got = mean_daily_profiles(t);
    CHECK(got.at2(0, 0) == doctest::Approx(13.0)); // mean of {16, 10}
    CHECK(got.at2(0, 1) == doctest::Approx(20.0));
}

TEST_CASE("kmeans separates well-spaced blobs and is seed-stable") {
    Tensor pts({6, 2}, {0.1, 0.0, 0.0, 0.2, 0.2, 0.1, 9.9, 10.0, 10.1, 9.8, 10.0, 10.2});
    auto km = kmeans(pts, 2, 7);
    CHECK(km.assignment[0] == km.assignment[1]);
    CHECK(km.assignment[1] == km.assignment[2]);
    CHECK(km.assignment[3] == km.assignment[4]);
    CHECK(km.assignment[4] == km.assignment[5]);
    CHECK(km.assignment[0] != km.assignment[3]);
    CHECK(km.iterations <= 100);

    auto again = kmeans(pts, 2, 7);
    CHECK(again.assignment == km.assignment);
    CHECK(again.centers.data == km.centers.data);

    CHECK_THROWS_AS(kmeans(pts, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(kmeans(pts, 7, 1), std::invalid_argument);
}

TEST_CASE("identical profiles give a complete graph at S = n_neighbors + 1") {
    Tensor prof({6, 4}, 3.0);
    auto t = tensor_from_profiles(prof, 7);
    DatasetSplit sp = split_by_days(10);
    auto es = pattern_edges(t, sp, 2, 5, 42);
    es.validate();
    CHECK(es.W() == 30); // complete K6, directed closure
    // Zero distances make every weight exp(0) = 1.
    for (const auto& f : es.features) CHECK(f[2] == doctest::Approx(1.0));
}

TEST_CASE("identical profiles break ties toward lower indices") {
    Tensor prof({8, 4}, 3.0);
    auto t = tensor_from_profiles(prof, 7);
    DatasetSplit sp = split_by_days(10);
    auto es = pattern_edges(t, sp, 2, 3, 42);
    // Each sensor picks the 3 lowest-indexed others; the undirected union
    // is exactly: pairs within {0,1,2,3}, plus (j, 0..2) for j >= 4.
    std::set<std::pair<int, int>> want;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) want.insert({i, j});
    for (int j = 4; j < 8; ++j)
        for (int i = 0; i < 3; ++i) want.insert({i, j});
    CHECK(undirected_pairs(es) == want);
}

TEST_CASE("pattern edges match a brute-force oracle on random profiles") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(500 + trial);
        const int S = 12 + trial;
        const int N = 8;
        Tensor prof({S, N});
        for (double& v : prof.data) v = rng.uniform(0.0, 50.0);

        auto t = tensor_from_profiles(prof, 7);
        DatasetSplit sp = split_by_days(10);
        auto es = pattern_edges(t, sp, 3, 5, 99 + trial);
        es.validate();

        // The clustering is shared; the neighbor rule is recomputed
        // independently.
        auto km = kmeans(mean_daily_profiles(t), 3, 99 + trial);
        CHECK(undirected_pairs(es) == brute_force_pairs(prof, km.assignment, 5));

        for (const auto& f : es.features) {
            CHECK(f[0] == 0.0);
            CHECK(f[1] == 1.0); // pattern bit
            CHECK(f[2] > 0.0);
            CHECK(f[2] <= 1.0);
        }
    }
}

TEST_CASE("small clusters fill their neighbor deficit from outside") {
    // Sensors 0..2 sit near zero, 3..8 far away; k = 2 splits them.
    const int S = 9, N = 4;
    Tensor prof({S, N});
    Rng rng(31);
    for (int s = 0; s < S; ++s)
        for (int p = 0; p < N; ++p)
            prof.at2(s, p) = (s < 3 ? 0.0 : 100.0) + rng.uniform(0.0, 1.0);

    auto t = tensor_from_profiles(prof, 7);
    DatasetSplit sp = split_by_days(10);
    auto es = pattern_edges(t, sp, 2, 5, 5);
    auto km = kmeans(mean_daily_profiles(t), 2, 5);
    // The blobs must actually be two clusters for the scenario to bite.
    REQUIRE(km.assignment[0] == km.assignment[1]);
    REQUIRE(km.assignment[0] != km.assignment[3]);

    CHECK(undirected_pairs(es) == brute_force_pairs(prof, km.assignment, 5));
    // Sensor 0 has only 2 same-cluster mates, so at least one cross-blob
    // edge must exist.
    bool crosses = false;
    for (const auto& [i, j] : undirected_pairs(es))
        if (km.assignment[i] != km.assignment[j]) crosses = true;
    CHECK(crosses);
}

TEST_CASE("pattern weights follow the similarity kernel") {
    const int S = 6, N = 3;
    Tensor prof({S, N});
    Rng rng(8);
    for (double& v : prof.data) v = rng.uniform(0.0, 10.0);
    auto t = tensor_from_profiles(prof, 7);
    DatasetSplit sp = split_by_days(10);
    auto es = pattern_edges(t, sp, 2, 2, 17);
    auto km = kmeans(mean_daily_profiles(t), 2, 17);

    // Recompute sigma independently: median intra-cluster distance.
    auto dist = [&](int a, int b) {
        double s = 0.0;
        for (int p = 0; p < N; ++p) {
            const double d = prof.at2(a, p) - prof.at2(b, p);
            s += d * d;
        }
        return std::sqrt(s);
    };
    std::vector<double> intra;
    for (int i = 0; i < S; ++i)
        for (int j = i + 1; j < S; ++j)
            if (km.assignment[i] == km.assignment[j]) intra.push_back(dist(i, j));
    REQUIRE(!intra.empty());
    std::sort(intra.begin(), intra.end());
    const double sigma = intra.size() % 2 ? intra[intra.size() / 2]
                                          : 0.5 * (intra[intra.size() / 2 - 1] +
                                                   intra[intra.size() / 2]);

    for (std::size_t e = 0; e < es.pairs.size(); ++e) {
        const auto [i, j] = es.pairs[e];
        const double d = dist(i, j);
        CHECK(es.features[e][2] ==
              doctest::Approx(std::exp(-(d * d) / (sigma * sigma))).epsilon(1e-12));
    }
}

TEST_CASE("pattern edges reject inputs beyond the training split") {
    Tensor prof({4, 4}, 1.0);
    DatasetSplit sp = split_by_days(10); // 7 training days
    auto leaky = tensor_from_profiles(prof, 8);
    CHECK_THROWS_WITH_AS(pattern_edges(leaky, sp, 2, 5, 1),
                         doctest::Contains("training split"), std::invalid_argument);
    auto ok = tensor_from_profiles(prof, 7);
    CHECK_NOTHROW(pattern_edges(ok, sp, 2, 3, 1));
    CHECK_THROWS_AS(pattern_edges(ok, sp, 2, 0, 1), std::invalid_argument);
}

TEST_CASE("pattern edges are deterministic") {
    Tensor prof({10, 6});
    Rng rng(14);
    for (double& v : prof.data) v = rng.uniform(0.0, 30.0);
    auto t = tensor_from_profiles(prof, 7);
    DatasetSplit sp = split_by_days(10);
    auto a = pattern_edges(t, sp, 2, 5, 3);
    auto b = pattern_edges(t, sp, 2, 5, 3);
    CHECK(a.pairs == b.pairs);
    CHECK(a.features == b.features);
}

TEST_CASE("merging edge sets unions pairs and joins features") {
    auto geo = geography_edges(chain_network({0.0, 1.0, 3.0})); // (0,1) w=1, (1,2) w=0.5

    EdgeSet pat;
    pat.n_sensors = 3;
    pat.pairs = {{0, 1}, {1, 0}, {0, 2}, {2, 0}};
    pat.features = {{0, 1, 0.8}, {0, 1, 0.8}, {0, 1, 0.3}, {0, 1, 0.3}};

    auto merged = merge_edges(geo, pat);
    merged.validate();
    CHECK(undirected_pairs(merged) == std::set<std::pair<int, int>>{{0, 1}, {0, 2}, {1, 2}});
    CHECK(merged.W() == 6);

    // Overlapping (0,1): both bits set, max weight kept.
    for (std::size_t e = 0; e < merged.pairs.size(); ++e) {
        if (merged.pairs[e] == std::pair{0, 1}) {
            CHECK(merged.features[e][0] == 1.0);
            CHECK(merged.features[e][1] == 1.0);
            CHECK(merged.features[e][2] == doctest::Approx(1.0));
        }
        if (merged.pairs[e] == std::pair{0, 2}) {
            CHECK(merged.features[e][0] == 0.0);
            CHECK(merged.features[e][1] == 1.0);
        }
    }

    // Disjoint sets just add up.
    EdgeSet far;
    far.n_sensors = 5;
    far.pairs = {{3, 4}, {4, 3}};
    far.features = {{0, 1, 0.9}, {0, 1, 0.9}};
    CHECK(merge_edges(geo, far).W() == geo.W() + far.W());

    // Identical sets collapse.
    CHECK(merge_edges(geo, geo).W() == geo.W());
}

TEST_CASE("edge files round trip exactly") {
    Tensor prof({7, 5});
    Rng rng(21);
    for (double& v : prof.data) v = rng.uniform(0.0, 40.0);
    auto t = tensor_from_profiles(prof, 7);
    auto es = merge_edges(geography_edges(chain_network({0, 1, 2, 4, 7, 8, 10})),
                          pattern_edges(t, split_by_days(10), 2, 3, 12));

    const std::string path = "/tmp/gttdi_test_edges.txt";
    save_edges(es, path);
    auto back = load_edges(path);
    CHECK(back.pairs == es.pairs);
    CHECK(back.features == es.features); // bit-exact weights via %.17g
    CHECK(back.n_sensors == es.n_sensors);
    std::remove(path.c_str());
}

TEST_CASE("edge set validation catches broken closures") {
    EdgeSet es;
    es.n_sensors = 3;
    es.pairs = {{0, 1}};
    es.features = {{1, 0, 0.5}};
    CHECK_THROWS_WITH_AS(es.validate(), doctest::Contains("mirror"), std::invalid_argument);

    es.pairs = {{0, 0}, {0, 0}};
    es.features = {{1, 0, 0.5}, {1, 0, 0.5}};
    CHECK_THROWS_WITH_AS(es.validate(), doctest::Contains("self-loop"), std::invalid_argument);

    es.pairs = {{0, 1}, {1, 0}, {0, 1}};
    es.features = {{1, 0, 0.5}, {1, 0, 0.5}, {1, 0, 0.5}};
    CHECK_THROWS_WITH_AS(es.validate(), doctest::Contains("duplicate"), std::invalid_argument);

    es.pairs = {{0, 4}, {4, 0}};
    es.features = {{1, 0, 0.5}, {1, 0, 0.5}};
    CHECK_THROWS_WITH_AS(es.validate(), doctest::Contains("out of range"), std::invalid_argument);
}
