#include "gttdi/data_model.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace gttdi {

// ---- calendar ---------------------------------------------------------

std::int64_t days_from_civil(const CivilDate& d) {
    int y = d.year;
    const unsigned m = static_cast<unsigned>(d.month);
    const unsigned day = static_cast<unsigned>(d.day);
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097LL + static_cast<std::int64_t>(doe) - 719468;
}

CivilDate civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned day = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(day)};
}

int weekday_from_days(std::int64_t z) {
    // 1970-01-01 was a Thursday; 0 = Monday.
    return static_cast<int>(z >= -3 ? (z + 3) % 7 : (z + 4) % 7 + 6);
}

CivilDate Calendar::date_of(int day_index) const {
    return civil_from_days(days_from_civil(start) + day_index);
}

int Calendar::weekday_of(int day_index) const {
    return weekday_from_days(days_from_civil(start) + day_index);
}

// ---- road network ------------------------------------------------------

std::string direction_name(Direction d) {
    switch (d) {
        case Direction::North: return "n";
        case Direction::South: return "s";
        case Direction::East: return "e";
        case Direction::West: return "w";
    }
    throw std::logic_error("direction_name: bad enum value");
}

Direction direction_from_name(const std::string& s) {
    if (s == "n") return Direction::North;
    if (s == "s") return Direction::South;
    if (s == "e") return Direction::East;
    if (s == "w") return Direction::West;
    throw std::invalid_argument("unknown direction '" + s + "' (expected n, s, e or w)");
}

int RoadNetwork::index_of(const std::string& sensor_id) const {
    for (int i = 0; i < size(); ++i)
        if (sensors[static_cast<std::size_t>(i)].sensor_id == sensor_id) return i;
    throw std::invalid_argument("unknown sensor id '" + sensor_id + "'");
}

void RoadNetwork::validate() const {
    std::unordered_map<std::string, int> seen;
    for (int i = 0; i < size(); ++i) {
        const auto& id = sensors[static_cast<std::size_t>(i)].sensor_id;
        if (!seen.emplace(id, i).second)
            throw std::invalid_argument("duplicate sensor id '" + id + "'");
    }
    for (const auto& [a, b] : segments) {
        if (a < 0 || a >= size() || b < 0 || b >= size())
            throw std::invalid_argument("segment endpoint out of range: " + std::to_string(a) +
                                        "-" + std::to_string(b));
        if (a == b) throw std::invalid_argument("segment connects a sensor to itself");
    }
}

void save_network(const RoadNetwork& net, const std::string& path) {
    nlohmann::json j;
    j["sensors"] = nlohmann::json::array();
    for (const Sensor& s : net.sensors) {
        j["sensors"].push_back({{"id", s.sensor_id},
                                {"road", s.road_id},
                                {"position", s.position},
                                {"direction", direction_name(s.direction)}});
    }
    j["segments"] = nlohmann::json::array();
    for (const auto& [a, b] : net.segments) {
        j["segments"].push_back({net.sensors[static_cast<std::size_t>(a)].sensor_id,
                                 net.sensors[static_cast<std::size_t>(b)].sensor_id});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write network file " + path);
    out << j.dump(2) << "\n";
}

RoadNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open network file " + path);
    nlohmann::json j;
    in >> j;
    RoadNetwork net;
    for (const auto& js : j.at("sensors")) {
        Sensor s;
        s.sensor_id = js.at("id").get<std::string>();
        s.road_id = js.at("road").get<std::string>();
        s.position = js.at("position").get<double>();
        s.direction = direction_from_name(js.at("direction").get<std::string>());
        net.sensors.push_back(std::move(s));
    }
    for (const auto& je : j.at("segments")) {
        net.segments.emplace_back(net.index_of(je.at(0).get<std::string>()),
                                  net.index_of(je.at(1).get<std::string>()));
    }
    net.validate();
    return net;
}

// ---- traffic tensor ------------------------------------------------------

std::string units_name(Units u) { return u == Units::Flow ? "flow" : "speed"; }

Units units_from_name(const std::string& s) {
    if (s == "flow") return Units::Flow;
    if (s == "speed") return Units::Speed;
    throw std::invalid_argument("unknown units '" + s + "' (expected flow or speed)");
}

std::int64_t TrafficSeriesTensor::observed_count() const {
    std::int64_t n = 0;
    for (std::uint8_t b : mask) n += b != 0;
    return n;
}

double TrafficSeriesTensor::missing_fraction() const {
    if (mask.empty()) return 0.0;
    return 1.0 - static_cast<double>(observed_count()) / static_cast<double>(mask.size());
}

void TrafficSeriesTensor::validate() const {
    if (values.ndim() != 3)
        throw std::invalid_argument("traffic tensor must be 3-D, got " + shape_str(values.shape));
    if (static_cast<std::int64_t>(mask.size()) != values.numel())
        throw std::invalid_argument("mask size " + std::to_string(mask.size()) +
                                    " does not match tensor " + shape_str(values.shape));
    if (slices_per_day < 1 || K() % slices_per_day != 0)
        throw std::invalid_argument("sample count " + std::to_string(K()) +
                                    " is not a multiple of slices per day " +
                                    std::to_string(slices_per_day));
    if (interval_minutes <= 0) throw std::invalid_argument("interval_minutes must be positive");
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            if (units == Units::Flow && values.data[i] < 0.0)
                throw std::invalid_argument("observed flow value is negative at flat index " +
                                            std::to_string(i));
        } else if (values.data[i] != 0.0) {
            throw std::invalid_argument("missing entry holds a non-zero sentinel at flat index " +
                                        std::to_string(i));
        }
    }
}

TrafficSeriesTensor reslice(const TrafficSeriesTensor& daily, int M) {
    if (daily.slices_per_day != 1)
        throw std::invalid_argument("reslice expects a daily tensor (M = 1), got M = " +
                                    std::to_string(daily.slices_per_day));
    const int D = daily.K(), S = daily.S(), N = daily.L();
    if (M < 1) throw std::invalid_argument("slice count must be at least 1");
    if (N % M != 0)
        throw std::invalid_argument("slice count " + std::to_string(M) +
                                    " does not divide points per day " + std::to_string(N));
    const int L = N / M;

    TrafficSeriesTensor out;
    out.values = Tensor({D * M, S, L});
    out.mask.assign(static_cast<std::size_t>(D) * M * S * L, 0);
    out.interval_minutes = daily.interval_minutes;
    out.slices_per_day = M;
    out.units = daily.units;
    out.calendar = daily.calendar;
    for (int d = 0; d < D; ++d)
        for (int m = 0; m < M; ++m)
            for (int s = 0; s < S; ++s)
                for (int l = 0; l < L; ++l) {
                    const auto src = daily.flat(d, s, m * L + l);
                    const auto dst = out.flat(d * M + m, s, l);
                    out.values.data[static_cast<std::size_t>(dst)] =
                        daily.values.data[static_cast<std::size_t>(src)];
                    out.mask[static_cast<std::size_t>(dst)] = daily.mask[static_cast<std::size_t>(src)];
                }
    return out;
}

TrafficSeriesTensor inverse_reslice(const TrafficSeriesTensor& sliced) {
    const int M = sliced.slices_per_day;
    const int D = sliced.D(), S = sliced.S(), L = sliced.L();
    TrafficSeriesTensor out;
    out.values = Tensor({D, S, L * M});
    out.mask.assign(static_cast<std::size_t>(D) * S * L * M, 0);
    out.interval_minutes = sliced.interval_minutes;
    out.slices_per_day = 1;
    out.units = sliced.units;
    out.calendar = sliced.calendar;
    for (int d = 0; d < D; ++d)
        for (int m = 0; m < M; ++m)
            for (int s = 0; s < S; ++s)
                for (int l = 0; l < L; ++l) {
                    const auto src = sliced.flat(d * M + m, s, l);
                    const auto dst = out.flat(d, s, m * L + l);
                    out.values.data[static_cast<std::size_t>(dst)] =
                        sliced.values.data[static_cast<std::size_t>(src)];
                    out.mask[static_cast<std::size_t>(dst)] = sliced.mask[static_cast<std::size_t>(src)];
                }
    return out;
}

// ---- dataset split -------------------------------------------------------

DatasetSplit split_by_days(int total_days, double train_ratio, double test_ratio) {
    if (total_days < 3)
        throw std::invalid_argument("need at least 3 days to split, got " +
                                    std::to_string(total_days));
    if (train_ratio <= 0 || test_ratio < 0 || train_ratio + test_ratio > 1.0 + 1e-12)
        throw std::invalid_argument("split ratios out of range");
    const int n_train = static_cast<int>(std::floor(train_ratio * total_days));
    const int n_test = static_cast<int>(std::floor(test_ratio * total_days));
    const int n_val = total_days - n_train - n_test;
    if (n_train < 1 || n_val < 0)
        throw std::invalid_argument("degenerate split for " + std::to_string(total_days) + " days");

    DatasetSplit sp;
    for (int d = 0; d < n_train; ++d) sp.train_days.push_back(d);
    for (int d = n_train; d < n_train + n_val; ++d) sp.val_days.push_back(d);
    for (int d = n_train + n_val; d < total_days; ++d) sp.test_days.push_back(d);
    return sp;
}

std::vector<int> samples_of_days(const TrafficSeriesTensor& t, const std::vector<int>& days) {
    std::vector<char> wanted(static_cast<std::size_t>(t.D()), 0);
    for (int d : days) {
        if (d < 0 || d >= t.D())
            throw std::invalid_argument("day index " + std::to_string(d) + " out of range");
        wanted[static_cast<std::size_t>(d)] = 1;
    }
    std::vector<int> ks;
    for (int k = 0; k < t.K(); ++k)
        if (wanted[static_cast<std::size_t>(t.day_of_sample(k))]) ks.push_back(k);
    return ks;
}

TrafficSeriesTensor select_days(const TrafficSeriesTensor& t, const std::vector<int>& days) {
    if (days.empty()) throw std::invalid_argument("select_days: empty day list");
    for (std::size_t i = 0; i < days.size(); ++i) {
        if (days[i] < 0 || days[i] >= t.D())
            throw std::invalid_argument("day index " + std::to_string(days[i]) + " out of range");
        if (i > 0 && days[i] != days[i - 1] + 1)
            throw std::invalid_argument("select_days needs a contiguous ascending day block");
    }
    const int M = t.slices_per_day;
    const int nd = static_cast<int>(days.size());
    TrafficSeriesTensor out;
    out.values = Tensor({nd * M, t.S(), t.L()});
    out.mask.assign(static_cast<std::size_t>(nd) * M * t.S() * t.L(), 0);
    out.interval_minutes = t.interval_minutes;
    out.slices_per_day = M;
    out.units = t.units;
    out.calendar.start = t.calendar.date_of(days.front());
    const std::int64_t per_sample = static_cast<std::int64_t>(t.S()) * t.L();
    for (int i = 0; i < nd * M; ++i) {
        const int src_k = days.front() * M + i;
        std::copy_n(t.values.data.begin() + src_k * per_sample, per_sample,
                    out.values.data.begin() + i * per_sample);
        std::copy_n(t.mask.begin() + src_k * per_sample, per_sample,
                    out.mask.begin() + i * per_sample);
    }
    return out;
}

Tensor sample_rows(const Tensor& t, const std::vector<int>& samples) {
    if (t.ndim() != 3) {
        throw std::invalid_argument("sample_rows expects a (K, S, W) tensor, got " + shape_str(t.shape));
    }
    const int K = t.dim(0), S = t.dim(1), W = t.dim(2);
    Tensor out({static_cast<int>(samples.size()), S, W});
    const std::int64_t per_sample = static_cast<std::int64_t>(S) * W;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i] < 0 || samples[i] >= K) {
            throw std::invalid_argument("sample index " + std::to_string(samples[i]) + " out of range [0, " +
                                        std::to_string(K) + ")");
        }
        std::copy_n(t.data.begin() + samples[i] * per_sample, per_sample,
                    out.data.begin() + static_cast<std::int64_t>(i) * per_sample);
    }
    return out;
}

// ---- normalization -------------------------------------------------------

double NormStats::normalize(double v) const { return (v - vmin) / std::max(span(), 1e-12); }
double NormStats::denormalize(double v) const { return v * std::max(span(), 1e-12) + vmin; }

NormStats compute_norm_stats(const TrafficSeriesTensor& t, const std::vector<int>& days) {
    std::vector<int> ks = samples_of_days(t, days);
    NormStats st;
    bool any = false;
    for (int k : ks)
        for (int s = 0; s < t.S(); ++s)
            for (int l = 0; l < t.L(); ++l)
                if (t.observed(k, s, l)) {
                    const double v = t.value(k, s, l);
                    if (!any) {
                        st.vmin = st.vmax = v;
                        any = true;
                    } else {
                        st.vmin = std::min(st.vmin, v);
                        st.vmax = std::max(st.vmax, v);
                    }
                }
    if (!any) throw std::runtime_error("no observed entries in the chosen days");
    return st;
}

// ---- CSV ----------------------------------------------------------------

namespace {

// Accepts YYYY-MM-DD[T ]HH:MM[:SS] with zero seconds.
void parse_timestamp(const std::string& ts, std::int64_t& days, int& minute_of_day) {
    int y, mo, d, h, mi, se = 0;
    char sep;
    const int got = std::sscanf(ts.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &se);
    if (got < 6 || (sep != 'T' && sep != ' '))
        throw std::invalid_argument("bad timestamp '" + ts + "'");
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || se != 0)
        throw std::invalid_argument("timestamp out of range '" + ts + "'");
    days = days_from_civil({y, mo, d});
    minute_of_day = h * 60 + mi;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

} // namespace

TrafficSeriesTensor load_csv(const std::string& path, const RoadNetwork& net,
                             int interval_minutes, Units units) {
    if (interval_minutes <= 0 || 1440 % interval_minutes != 0)
        throw std::invalid_argument("interval " + std::to_string(interval_minutes) +
                                    " does not divide a day");
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open CSV file " + path);

    struct Row {
        int sensor;
        std::int64_t day;
        int point;
        bool observed;
        double value;
    };
    std::vector<Row> rows;
    std::int64_t day_min = 0, day_max = 0;

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || (lineno == 1 && line.rfind("sensor_id", 0) == 0)) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": expected 3 fields, got " + std::to_string(fields.size()));
        Row r;
        r.sensor = net.index_of(fields[0]);
        std::int64_t days;
        int minute;
        parse_timestamp(fields[1], days, minute);
        if (minute % interval_minutes != 0)
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": timestamp off the sampling grid");
        r.day = days;
        r.point = minute / interval_minutes;
        r.observed = !fields[2].empty();
        r.value = r.observed ? std::stod(fields[2]) : 0.0;
        if (rows.empty()) {
            day_min = day_max = days;
        } else {
            day_min = std::min(day_min, days);
            day_max = std::max(day_max, days);
        }
        rows.push_back(r);
    }
    if (rows.empty()) throw std::runtime_error("CSV file " + path + " holds no observations");

    const int D = static_cast<int>(day_max - day_min + 1);
    const int S = net.size();
    const int N = 1440 / interval_minutes;

    TrafficSeriesTensor t;
    t.values = Tensor({D, S, N}, 0.0);
    t.mask.assign(static_cast<std::size_t>(D) * S * N, 0);
    t.interval_minutes = interval_minutes;
    t.slices_per_day = 1;
    t.units = units;
    t.calendar.start = civil_from_days(day_min);
    std::vector<char> filled(t.mask.size(), 0);
    for (const Row& r : rows) {
        const auto idx = static_cast<std::size_t>(t.flat(static_cast<int>(r.day - day_min),
                                                         r.sensor, r.point));
        if (filled[idx])
            throw std::invalid_argument(path + ": duplicate observation for sensor " +
                                        net.sensors[static_cast<std::size_t>(r.sensor)].sensor_id);
        filled[idx] = 1;
        if (r.observed) {
            t.values.data[idx] = r.value;
            t.mask[idx] = 1;
        }
    }
    t.validate();
    return t;
}

void save_csv(const TrafficSeriesTensor& daily, const RoadNetwork& net, const std::string& path) {
    if (daily.slices_per_day != 1)
        throw std::invalid_argument("save_csv expects a daily tensor (M = 1)");
    if (daily.S() != net.size())
        throw std::invalid_argument("tensor has " + std::to_string(daily.S()) +
                                    " sensors but the network has " + std::to_string(net.size()));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write CSV file " + path);
    out << "sensor_id,timestamp,value\n";
    char ts[32];
    char val[32];
    for (int d = 0; d < daily.K(); ++d) {
        const CivilDate date = daily.calendar.date_of(d);
        for (int p = 0; p < daily.L(); ++p) {
            const int minute = p * daily.interval_minutes;
            std::snprintf(ts, sizeof ts, "%04d-%02d-%02dT%02d:%02d:00", date.year, date.month,
                          date.day, minute / 60, minute % 60);
            for (int s = 0; s < daily.S(); ++s) {
                out << net.sensors[static_cast<std::size_t>(s)].sensor_id << ',' << ts << ',';
                if (daily.observed(d, s, p)) {
                    std::snprintf(val, sizeof val, "%.6f", daily.value(d, s, p));
                    out << val;
                }
                out << '\n';
            }
        }
    }
}

// ---- binary formats --------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 24)};
    out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated binary file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_i32(std::ostream& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }
std::int32_t get_i32(std::istream& in) { return static_cast<std::int32_t>(get_u32(in)); }

void put_f64(std::ostream& out, double v) {
    const auto u = std::bit_cast<std::uint64_t>(v);
    put_u32(out, static_cast<std::uint32_t>(u));
    put_u32(out, static_cast<std::uint32_t>(u >> 32));
}

double get_f64(std::istream& in) {
    const std::uint64_t lo = get_u32(in);
    const std::uint64_t hi = get_u32(in);
    return std::bit_cast<double>(lo | (hi << 32));
}

void put_bits(std::ostream& out, const std::vector<std::uint8_t>& bits) {
    std::uint8_t acc = 0;
    int n = 0;
    for (std::uint8_t b : bits) {
        if (b) acc |= static_cast<std::uint8_t>(1u << n);
        if (++n == 8) {
            out.put(static_cast<char>(acc));
            acc = 0;
            n = 0;
        }
    }
    if (n > 0) out.put(static_cast<char>(acc));
}

std::vector<std::uint8_t> get_bits(std::istream& in, std::size_t count) {
    std::vector<std::uint8_t> bits(count, 0);
    std::uint8_t acc = 0;
    for (std::size_t i = 0; i < count; ++i) {
        const int n = static_cast<int>(i % 8);
        if (n == 0) {
            int c = in.get();
            if (c == EOF) throw std::runtime_error("truncated binary file");
            acc = static_cast<std::uint8_t>(c);
        }
        bits[i] = (acc >> n) & 1u;
    }
    return bits;
}

void check_magic(std::istream& in, const char* magic, const std::string& path) {
    char got[4];
    in.read(got, 4);
    if (!in || std::string(got, 4) != magic)
        throw std::runtime_error(path + " is not a " + magic + " file");
}

constexpr std::uint32_t kFormatVersion = 1;

} // namespace

void save_cache(const TrafficSeriesTensor& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write cache file " + path);
    out.write("GTTC", 4);
    put_u32(out, kFormatVersion);
    put_i32(out, t.D());
    put_i32(out, t.S());
    put_i32(out, t.points_per_day());
    put_i32(out, t.slices_per_day);
    put_i32(out, t.interval_minutes);
    put_i32(out, t.units == Units::Flow ? 0 : 1);
    put_i32(out, t.calendar.start.year);
    put_i32(out, t.calendar.start.month);
    put_i32(out, t.calendar.start.day);
    for (double v : t.values.data) put_f64(out, v);
    put_bits(out, t.mask);
    if (!out) throw std::runtime_error("write error on cache file " + path);
}

TrafficSeriesTensor load_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open cache file " + path);
    check_magic(in, "GTTC", path);
    const std::uint32_t version = get_u32(in);
    if (version != kFormatVersion)
        throw std::runtime_error(path + ": unsupported cache version " + std::to_string(version));
    const int D = get_i32(in);
    const int S = get_i32(in);
    const int N = get_i32(in);
    const int M = get_i32(in);
    const int interval = get_i32(in);
    const int units = get_i32(in);
    CivilDate start;
    start.year = get_i32(in);
    start.month = get_i32(in);
    start.day = get_i32(in);
    if (D < 1 || S < 1 || N < 1 || M < 1 || N % M != 0)
        throw std::runtime_error(path + ": corrupt cache header");

    TrafficSeriesTensor t;
    t.values = Tensor({D * M, S, N / M});
    for (double& v : t.values.data) v = get_f64(in);
    t.mask = get_bits(in, static_cast<std::size_t>(t.values.numel()));
    t.interval_minutes = interval;
    t.slices_per_day = M;
    t.units = units == 0 ? Units::Flow : Units::Speed;
    t.calendar.start = start;
    t.validate();
    return t;
}

void save_mask(const std::vector<std::uint8_t>& mask, int K, int S, int L,
               const std::string& path) {
    if (static_cast<std::size_t>(K) * S * L != mask.size())
        throw std::invalid_argument("mask size does not match (" + std::to_string(K) + "," +
                                    std::to_string(S) + "," + std::to_string(L) + ")");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write mask file " + path);
    out.write("GTTM", 4);
    put_u32(out, kFormatVersion);
    put_i32(out, K);
    put_i32(out, S);
    put_i32(out, L);
    put_bits(out, mask);
    if (!out) throw std::runtime_error("write error on mask file " + path);
}

std::vector<std::uint8_t> load_mask(const std::string& path, int& K, int& S, int& L) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open mask file " + path);
    check_magic(in, "GTTM", path);
    const std::uint32_t version = get_u32(in);
    if (version != kFormatVersion)
        throw std::runtime_error(path + ": unsupported mask version " + std::to_string(version));
    K = get_i32(in);
    S = get_i32(in);
    L = get_i32(in);
    if (K < 1 || S < 1 || L < 1) throw std::runtime_error(path + ": corrupt mask header");
    return get_bits(in, static_cast<std::size_t>(K) * S * L);
}

} // namespace gttdi
