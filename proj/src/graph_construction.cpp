#include "gttdi/graph_construction.hpp"

#include "gttdi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gttdi {

namespace {

using FeatureRow = std::array<double, kEdgeFeatureDim>;

// Deterministic directed closure from an undirected (i<j) -> feature map.
EdgeSet closure_from_undirected(const std::map<std::pair<int, int>, FeatureRow>& und,
                                int n_sensors) {
    EdgeSet es;
    es.n_sensors = n_sensors;
    std::vector<std::pair<std::pair<int, int>, FeatureRow>> directed;
    directed.reserve(und.size() * 2);
    for (const auto& [pr, f] : und) {
        directed.push_back({{pr.first, pr.second}, f});
        directed.push_back({{pr.second, pr.first}, f});
    }
    std::sort(directed.begin(), directed.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [pr, f] : directed) {
        es.pairs.push_back(pr);
        es.features.push_back(f);
    }
    return es;
}

double sq_dist(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

void EdgeSet::validate() const {
    if (pairs.size() != features.size())
        throw std::invalid_argument("edge set has " + std::to_string(pairs.size()) +
                                    " pairs but " + std::to_string(features.size()) + " features");
    std::map<std::pair<int, int>, FeatureRow> seen;
    for (std::size_t e = 0; e < pairs.size(); ++e) {
        const auto [i, j] = pairs[e];
        if (i < 0 || j < 0 || i >= n_sensors || j >= n_sensors)
            throw std::invalid_argument("edge (" + std::to_string(i) + ", " + std::to_string(j) +
                                        ") out of range for " + std::to_string(n_sensors) +
                                        " sensors");
        if (i == j)
            throw std::invalid_argument("self-loop at sensor " + std::to_string(i));
        if (!seen.emplace(pairs[e], features[e]).second)
            throw std::invalid_argument("duplicate edge (" + std::to_string(i) + ", " +
                                        std::to_string(j) + ")");
    }
    for (const auto& [pr, f] : seen) {
        auto mirror = seen.find({pr.second, pr.first});
        if (mirror == seen.end())
            throw std::invalid_argument("edge (" + std::to_string(pr.first) + ", " +
                                        std::to_string(pr.second) + ") lacks its mirror");
        if (mirror->second != f)
            throw std::invalid_argument("edge (" + std::to_string(pr.first) + ", " +
                                        std::to_string(pr.second) +
                                        ") and its mirror carry different features");
    }
}

EdgeSet geography_edges(const RoadNetwork& net) {
    net.validate();
    std::map<std::pair<int, int>, double> dist; // undirected key i<j
    for (const auto& [a, b] : net.segments) {
        const double d = std::abs(net.sensors[static_cast<std::size_t>(a)].position -
                                  net.sensors[static_cast<std::size_t>(b)].position);
        if (d == 0.0)
            throw std::invalid_argument(
                "coincident sensors '" + net.sensors[static_cast<std::size_t>(a)].sensor_id +
                "' and '" + net.sensors[static_cast<std::size_t>(b)].sensor_id + "'");
        dist.emplace(std::minmax(a, b), d);
    }

    double max_inv = 0.0;
    for (const auto& [pr, d] : dist) max_inv = std::max(max_inv, 1.0 / d);

    std::map<std::pair<int, int>, FeatureRow> und;
    for (const auto& [pr, d] : dist) und[pr] = {1.0, 0.0, (1.0 / d) / max_inv};
    return closure_from_undirected(und, net.size());
}

Tensor mean_daily_profiles(const TrafficSeriesTensor& t) {
    const TrafficSeriesTensor daily = t.slices_per_day > 1 ? inverse_reslice(t) : t;
    const int D = daily.K(), S = daily.S(), N = daily.L();
    Tensor prof({S, N}, 0.0);
    for (int s = 0; s < S; ++s)
        for (int p = 0; p < N; ++p) {
            double sum = 0.0;
            int cnt = 0;
            for (int d = 0; d < D; ++d)
                if (daily.observed(d, s, p)) {
                    sum += daily.value(d, s, p);
                    ++cnt;
                }
            prof.at2(s, p) = cnt > 0 ? sum / cnt : 0.0;
        }
    return prof;
}

int default_cluster_count(int n_sensors) { return std::max(2, n_sensors / 10); }

KMeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iters) {
    if (points.ndim() != 2)
        throw std::invalid_argument("kmeans expects (points, features), got " +
                                    shape_str(points.shape));
    const int S = points.shape[0], F = points.shape[1];
    if (k < 1 || k > S)
        throw std::invalid_argument("cluster count " + std::to_string(k) + " outside [1, " +
                                    std::to_string(S) + "]");
    Rng rng = Rng::stream(seed, "kmeans");

    // k-means++ seeding: first center uniform, then D^2-weighted picks.
    std::vector<int> center_idx;
    center_idx.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(S))));
    std::vector<double> d2(static_cast<std::size_t>(S));
    while (static_cast<int>(center_idx.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < S; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int c : center_idx)
                best = std::min(best, sq_dist(&points.data[static_cast<std::size_t>(i) * F],
                                              &points.data[static_cast<std::size_t>(c) * F], F));
            d2[static_cast<std::size_t>(i)] = best;
            total += best;
        }
        int pick = -1;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double cum = 0.0;
            for (int i = 0; i < S; ++i) {
                cum += d2[static_cast<std::size_t>(i)];
                if (cum > r) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0) pick = S - 1;
        } else {
            // All remaining points coincide with a center; take the lowest
            // index not yet chosen.
            for (int i = 0; i < S && pick < 0; ++i)
                if (std::find(center_idx.begin(), center_idx.end(), i) == center_idx.end()) pick = i;
        }
        center_idx.push_back(pick);
    }

    Tensor centers({k, F});
    for (int c = 0; c < k; ++c)
        std::copy_n(&points.data[static_cast<std::size_t>(center_idx[static_cast<std::size_t>(c)]) * F],
                    F, &centers.data[static_cast<std::size_t>(c) * F]);

    KMeansResult res;
    res.assignment.assign(static_cast<std::size_t>(S), -1);
    for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
        bool changed = false;
        for (int i = 0; i < S; ++i) {
            int best = 0;
            double bestd = sq_dist(&points.data[static_cast<std::size_t>(i) * F],
                                   &centers.data[0], F);
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist(&points.data[static_cast<std::size_t>(i) * F],
                                         &centers.data[static_cast<std::size_t>(c) * F], F);
                if (d < bestd) {
                    bestd = d;
                    best = c;
                }
            }
            if (res.assignment[static_cast<std::size_t>(i)] != best) {
                res.assignment[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;
        for (int c = 0; c < k; ++c) {
            int cnt = 0;
            std::vector<double> mean(static_cast<std::size_t>(F), 0.0);
            for (int i = 0; i < S; ++i)
                if (res.assignment[static_cast<std::size_t>(i)] == c) {
                    ++cnt;
                    for (int f = 0; f < F; ++f)
                        mean[static_cast<std::size_t>(f)] +=
                            points.data[static_cast<std::size_t>(i) * F + f];
                }
            if (cnt > 0)
                for (int f = 0; f < F; ++f)
                    centers.data[static_cast<std::size_t>(c) * F + f] =
                        mean[static_cast<std::size_t>(f)] / cnt;
            // Empty clusters keep their previous center.
        }
    }
    res.centers = std::move(centers);
    return res;
}

EdgeSet pattern_edges(const TrafficSeriesTensor& train_truth, const DatasetSplit& split,
                      int n_clusters, int n_neighbors, std::uint64_t seed) {
    if (n_neighbors < 1)
        throw std::invalid_argument("neighbor count must be at least 1");
    const int S = train_truth.S();
    if (S < 2) throw std::invalid_argument("pattern edges need at least 2 sensors");
    if (train_truth.D() != static_cast<int>(split.train_days.size()))
        throw std::invalid_argument(
            "pattern edges must be built from the training split only: tensor covers " +
            std::to_string(train_truth.D()) + " days, split trains on " +
            std::to_string(split.train_days.size()));

    const Tensor prof = mean_daily_profiles(train_truth);
    const int N = prof.shape[1];
    const int k = std::min(std::max(n_clusters, 1), S);
    const KMeansResult km = kmeans(prof, k, seed);

    // Dense pairwise profile distances.
    Tensor dist({S, S}, 0.0);
    for (int i = 0; i < S; ++i)
        for (int j = i + 1; j < S; ++j) {
            const double d = std::sqrt(sq_dist(&prof.data[static_cast<std::size_t>(i) * N],
                                               &prof.data[static_cast<std::size_t>(j) * N], N));
            dist.at2(i, j) = d;
            dist.at2(j, i) = d;
        }

    std::vector<double> intra;
    for (int i = 0; i < S; ++i)
        for (int j = i + 1; j < S; ++j)
            if (km.assignment[static_cast<std::size_t>(i)] ==
                km.assignment[static_cast<std::size_t>(j)])
                intra.push_back(dist.at2(i, j));
    double sigma = median(intra);
    if (intra.empty()) {
        std::vector<double> all;
        for (int i = 0; i < S; ++i)
            for (int j = i + 1; j < S; ++j) all.push_back(dist.at2(i, j));
        sigma = median(all);
    }
    sigma = std::max(sigma, 1e-12);

    std::map<std::pair<int, int>, FeatureRow> und;
    for (int i = 0; i < S; ++i) {
        // Same-cluster candidates first, then the rest; each block ordered
        // by (distance, index) so ties break toward lower sensor indices.
        std::vector<std::pair<double, int>> same, other;
        for (int j = 0; j < S; ++j) {
            if (j == i) continue;
            auto& bucket = km.assignment[static_cast<std::size_t>(j)] ==
                                   km.assignment[static_cast<std::size_t>(i)]
                               ? same
                               : other;
            bucket.push_back({dist.at2(i, j), j});
        }
        std::sort(same.begin(), same.end());
        std::sort(other.begin(), other.end());
        same.insert(same.end(), other.begin(), other.end());

        const int take = std::min<int>(n_neighbors, static_cast<int>(same.size()));
        for (int t = 0; t < take; ++t) {
            const int j = same[static_cast<std::size_t>(t)].second;
            const double d = same[static_cast<std::size_t>(t)].first;
            const double w = std::exp(-(d * d) / (sigma * sigma));
            und.emplace(std::minmax(i, j), FeatureRow{0.0, 1.0, w});
        }
    }
    return closure_from_undirected(und, S);
}

EdgeSet merge_edges(const EdgeSet& geo, const EdgeSet& pattern) {
    geo.validate();
    pattern.validate();
    const int n = std::max(geo.n_sensors, pattern.n_sensors);

    std::map<std::pair<int, int>, FeatureRow> und;
    auto absorb = [&und](const EdgeSet& es) {
        for (std::size_t e = 0; e < es.pairs.size(); ++e) {
            const auto [i, j] = es.pairs[e];
            if (i > j) continue; // one representative per undirected edge
            auto [it, fresh] = und.emplace(std::pair{i, j}, es.features[e]);
            if (!fresh) {
                it->second[0] = std::max(it->second[0], es.features[e][0]);
                it->second[1] = std::max(it->second[1], es.features[e][1]);
                it->second[2] = std::max(it->second[2], es.features[e][2]);
            }
        }
    };
    absorb(geo);
    absorb(pattern);
    return closure_from_undirected(und, n);
}

void save_edges(const EdgeSet& edges, const std::string& path) {
    edges.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write edge file " + path);
    char line[96];
    for (std::size_t e = 0; e < edges.pairs.size(); ++e) {
        const auto [i, j] = edges.pairs[e];
        if (i > j) continue;
        const auto& f = edges.features[e];
        std::snprintf(line, sizeof line, "%d %d %d %d %.17g\n", i, j,
                      f[0] != 0.0 ? 1 : 0, f[1] != 0.0 ? 1 : 0, f[2]);
        out << line;
    }
}

EdgeSet load_edges(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open edge file " + path);
    std::map<std::pair<int, int>, FeatureRow> und;
    int max_idx = -1;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        int i, j, g, p;
        double w;
        if (!(ss >> i >> j >> g >> p >> w))
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed edge line");
        und[std::minmax(i, j)] = {static_cast<double>(g), static_cast<double>(p), w};
        max_idx = std::max({max_idx, i, j});
    }
    return closure_from_undirected(und, max_idx + 1);
}

} // namespace gttdi
