#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gttdi/data_model.hpp"
#include "gttdi/rng.hpp"

#include <cstdio>
#include <stdexcept>

using namespace gttdi;

namespace {

RoadNetwork two_sensor_network() {
    RoadNetwork net;
    net.sensors = {{"s1", "r1", 0.0, Direction::North}, {"s2", "r1", 1.2, Direction::North}};
    net.segments = {{0, 1}};
    return net;
}

TrafficSeriesTensor make_daily(int D, int S, int N, double fill = 1.0) {
    TrafficSeriesTensor t;
    t.values = Tensor({D, S, N}, fill);
    t.mask.assign(static_cast<std::size_t>(D) * S * N, 1);
    t.interval_minutes = 1440 / N;
    t.slices_per_day = 1;
    t.units = Units::Flow;
    t.calendar.start = {2013, 1, 1};
    return t;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/gttdi_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("civil date arithmetic") {
    CHECK(days_from_civil({1970, 1, 1}) == 0);
    CHECK(weekday_from_days(0) == 3); // Thursday
    CHECK(weekday_from_days(days_from_civil({2013, 1, 1})) == 1); // Tuesday
    // Round trip across a leap boundary.
    const CivilDate d = civil_from_days(days_from_civil({2016, 2, 29}));
    CHECK(d.year == 2016);
    CHECK(d.month == 2);
    CHECK(d.day == 29);

    Calendar cal{{2013, 1, 1}};
    CHECK(cal.weekday_of(0) == 1);
    CHECK(cal.is_weekend(4));  // Jan 5 2013, Saturday
    CHECK(cal.is_weekend(5));  // Sunday
    CHECK_FALSE(cal.is_weekend(6));
    CHECK(cal.date_of(31).month == 2);
}

TEST_CASE("reslice shape arithmetic") {
    // (1, 1, 8) with 4 slices becomes (4, 1, 2).
    auto t = reslice(make_daily(1, 1, 8), 4);
    CHECK(t.values.shape == std::vector<int>{4, 1, 2});
    CHECK(t.D() == 1);
    CHECK(t.M() == 4);

    // One slice is the identity grouping.
    auto t1 = reslice(make_daily(3, 2, 8), 1);
    CHECK(t1.values.shape == std::vector<int>{3, 2, 8});

    // 100 days of 10-minute data split into 4 slices.
    auto t2 = reslice(make_daily(100, 2, 144), 4);
    CHECK(t2.values.shape == std::vector<int>{400, 2, 36});

    CHECK_THROWS_AS(reslice(make_daily(1, 1, 8), 3), std::invalid_argument);
    CHECK_THROWS_AS(reslice(make_daily(1, 1, 8), 0), std::invalid_argument);
    CHECK_THROWS_AS(reslice(t, 2), std::invalid_argument); // not a daily tensor
}

TEST_CASE("reslice places points and inverts exactly") {
    auto daily = make_daily(2, 1, 6, 0.0);
    for (int d = 0; d < 2; ++d)
        for (int p = 0; p < 6; ++p)
            daily.values.data[static_cast<std::size_t>(daily.flat(d, 0, p))] = d * 100 + p;

    auto sliced = reslice(daily, 3); // L = 2
    // Sample (d, m) must hold points [2m, 2m+2) of day d.
    CHECK(sliced.value(0, 0, 0) == 0);
    CHECK(sliced.value(1, 0, 1) == 3);
    CHECK(sliced.value(2, 0, 0) == 4);
    CHECK(sliced.value(5, 0, 1) == 105);
    CHECK(sliced.day_of_sample(4) == 1);
    CHECK(sliced.slice_of_sample(4) == 1);

    // Random mask survives the round trip bit-exactly.
    Rng rng(7);
    for (auto& b : daily.mask) b = rng.bernoulli(0.7) ? 1 : 0;
    for (std::size_t i = 0; i < daily.mask.size(); ++i)
        if (!daily.mask[i]) daily.values.data[i] = 0.0;
    auto back = inverse_reslice(reslice(daily, 3));
    CHECK(back.values.shape == daily.values.shape);
    CHECK(back.values.data == daily.values.data);
    CHECK(back.mask == daily.mask);
}

TEST_CASE("day splits are contiguous, ordered and exhaustive") {
    auto sp = split_by_days(100);
    CHECK(sp.train_days.size() == 70);
    CHECK(sp.val_days.size() == 10);
    CHECK(sp.test_days.size() == 20);
    CHECK(sp.train_days.front() == 0);
    CHECK(sp.val_days.front() == 70);
    CHECK(sp.test_days.front() == 80);
    CHECK(sp.test_days.back() == 99);

    auto sp10 = split_by_days(10);
    CHECK(sp10.train_days.size() == 7);
    CHECK(sp10.val_days.size() == 1);
    CHECK(sp10.test_days.size() == 2);

    auto sp30 = split_by_days(30);
    CHECK(sp30.train_days.size() == 21);
    CHECK(sp30.val_days.size() == 3);
    CHECK(sp30.test_days.size() == 6);

    CHECK_THROWS_AS(split_by_days(2), std::invalid_argument);
}

TEST_CASE("samples_of_days selects whole days in order") {
    auto t = reslice(make_daily(4, 1, 8), 4);
    auto ks = samples_of_days(t, {1, 3});
    CHECK(ks == std::vector<int>{4, 5, 6, 7, 12, 13, 14, 15});
    CHECK_THROWS_AS(samples_of_days(t, {9}), std::invalid_argument);
}

TEST_CASE("normalization statistics come from the chosen days only") {
    auto daily = make_daily(3, 1, 4, 0.0);
    // Day 0: 1..4, day 1: 5..8, day 2: 100 (should not leak into stats).
    for (int p = 0; p < 4; ++p) {
        daily.values.data[static_cast<std::size_t>(daily.flat(0, 0, p))] = 1.0 + p;
        daily.values.data[static_cast<std::size_t>(daily.flat(1, 0, p))] = 5.0 + p;
        daily.values.data[static_cast<std::size_t>(daily.flat(2, 0, p))] = 100.0;
    }
    // Mask out the 8 so the max over days {0,1} comes from an observed cell.
    daily.mask[static_cast<std::size_t>(daily.flat(1, 0, 3))] = 0;
    daily.values.data[static_cast<std::size_t>(daily.flat(1, 0, 3))] = 0.0;

    auto st = compute_norm_stats(daily, {0, 1});
    CHECK(st.vmin == 1.0);
    CHECK(st.vmax == 7.0);
    CHECK(st.normalize(7.0) == doctest::Approx(1.0));
    CHECK(st.denormalize(st.normalize(3.3)) == doctest::Approx(3.3));
}

TEST_CASE("tensor validation catches inconsistent states") {
    auto t = make_daily(2, 1, 4);
    CHECK_NOTHROW(t.validate());

    auto neg = t;
    neg.values.data[0] = -1.0;
    CHECK_THROWS_AS(neg.validate(), std::invalid_argument);

    auto sentinel = t;
    sentinel.mask[2] = 0; // value left non-zero
    CHECK_THROWS_AS(sentinel.validate(), std::invalid_argument);

    auto shrunk = t;
    shrunk.mask.pop_back();
    CHECK_THROWS_AS(shrunk.validate(), std::invalid_argument);
}

TEST_CASE("road network validation") {
    auto net = two_sensor_network();
    CHECK_NOTHROW(net.validate());
    CHECK(net.index_of("s2") == 1);
    CHECK_THROWS_AS(net.index_of("nope"), std::invalid_argument);

    auto dup = net;
    dup.sensors.push_back({"s1", "r2", 3.0, Direction::South});
    CHECK_THROWS_AS(dup.validate(), std::invalid_argument);

    auto bad = net;
    bad.segments.emplace_back(0, 5);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("network file round trip") {
    TempFile f("net.json");
    auto net = two_sensor_network();
    save_network(net, f.path);
    auto back = load_network(f.path);
    REQUIRE(back.size() == 2);
    CHECK(back.sensors[1].sensor_id == "s2");
    CHECK(back.sensors[1].position == doctest::Approx(1.2));
    CHECK(back.sensors[0].direction == Direction::North);
    REQUIRE(back.segments.size() == 1);
    CHECK(back.segments[0] == std::pair<int, int>{0, 1});
}

TEST_CASE("CSV round trip preserves values, gaps and the calendar") {
    auto net = two_sensor_network();
    auto daily = make_daily(2, 2, 2, 0.0); // 720-minute interval
    daily.values.data = {3.5, 0.0, 1.25, 2.0, 0.5, 4.0, 0.0, 6.0};
    daily.mask = {1, 0, 1, 1, 1, 1, 0, 1};

    TempFile f("series.csv");
    save_csv(daily, net, f.path);
    auto back = load_csv(f.path, net, 720, Units::Flow);
    CHECK(back.values.shape == daily.values.shape);
    CHECK(back.values.data == daily.values.data);
    CHECK(back.mask == daily.mask);
    CHECK(back.calendar.start.year == 2013);
    CHECK(back.calendar.start.month == 1);
    CHECK(back.calendar.start.day == 1);
}

TEST_CASE("CSV ingestion rejects malformed rows") {
    auto net = two_sensor_network();
    TempFile f("bad.csv");

    auto write = [&](const char* body) {
        std::FILE* fp = std::fopen(f.path.c_str(), "w");
        std::fputs("sensor_id,timestamp,value\n", fp);
        std::fputs(body, fp);
        std::fclose(fp);
    };

    write("s1,2013-01-01T00:07:00,5\n");
    CHECK_THROWS_AS(load_csv(f.path, net, 720, Units::Flow), std::invalid_argument); // off grid

    write("s1,2013-01-01T00:00:00,5\ns1,2013-01-01T00:00:00,6\n");
    CHECK_THROWS_AS(load_csv(f.path, net, 720, Units::Flow), std::invalid_argument); // duplicate

    write("s9,2013-01-01T00:00:00,5\n");
    CHECK_THROWS_AS(load_csv(f.path, net, 720, Units::Flow), std::invalid_argument); // unknown id

    write("s1,2013-01-01T00:00:00\n");
    CHECK_THROWS_AS(load_csv(f.path, net, 720, Units::Flow), std::invalid_argument); // 2 fields

    CHECK_THROWS_AS(load_csv(f.path, net, 7, Units::Flow), std::invalid_argument); // bad interval
}

TEST_CASE("missing CSV rows mean unobserved") {
    auto net = two_sensor_network();
    TempFile f("sparse.csv");
    std::FILE* fp = std::fopen(f.path.c_str(), "w");
    std::fputs("sensor_id,timestamp,value\n", fp);
    std::fputs("s1,2013-01-01T00:00:00,5\n", fp);
    std::fputs("s2,2013-01-01T12:00:00,\n", fp); // explicit empty field
    std::fclose(fp);

    auto t = load_csv(f.path, net, 720, Units::Flow);
    CHECK(t.values.shape == std::vector<int>{1, 2, 2});
    CHECK(t.observed(0, 0, 0));
    CHECK_FALSE(t.observed(0, 0, 1)); // absent row
    CHECK_FALSE(t.observed(0, 1, 1)); // empty field
    CHECK(t.observed_count() == 1);
}

TEST_CASE("binary cache round trip is bit exact") {
    auto daily = make_daily(3, 2, 4, 0.0);
    Rng rng(99);
    for (std::size_t i = 0; i < daily.values.data.size(); ++i) {
        daily.mask[i] = rng.bernoulli(0.8) ? 1 : 0;
        daily.values.data[i] = daily.mask[i] ? rng.uniform(0.0, 500.0) : 0.0;
    }
    auto sliced = reslice(daily, 2);

    TempFile f("tensor.gttc");
    save_cache(sliced, f.path);
    auto back = load_cache(f.path);
    CHECK(back.values.shape == sliced.values.shape);
    CHECK(back.values.data == sliced.values.data); // exact doubles
    CHECK(back.mask == sliced.mask);
    CHECK(back.slices_per_day == 2);
    CHECK(back.interval_minutes == sliced.interval_minutes);
    CHECK(back.units == Units::Flow);
    CHECK(back.calendar.start.day == 1);

    // Wrong magic is rejected.
    TempFile g("mask.gttm");
    save_mask(sliced.mask, sliced.K(), sliced.S(), sliced.L(), g.path);
    CHECK_THROWS_AS(load_cache(g.path), std::runtime_error);
}

TEST_CASE("mask file round trip") {
    TempFile f("mask_only.gttm");
    std::vector<std::uint8_t> m = {1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0};
    save_mask(m, 2, 3, 2, f.path);
    int K = 0, S = 0, L = 0;
    auto back = load_mask(f.path, K, S, L);
    CHECK(K == 2);
    CHECK(S == 3);
    CHECK(L == 2);
    CHECK(back == m);
    CHECK_THROWS_AS(save_mask(m, 2, 3, 3, f.path), std::invalid_argument);
}
