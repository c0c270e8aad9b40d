#pragma once

#include "gttdi/data_model.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gttdi {

// Edge features: [geography bit, pattern bit, weight].
inline constexpr int kEdgeFeatureDim = 3;

// Undirected graph stored as its directed closure: (i, j) and (j, i) are
// both listed with identical features.
struct EdgeSet {
    std::vector<std::pair<int, int>> pairs;            // length W
    std::vector<std::array<double, kEdgeFeatureDim>> features;
    int n_sensors = 0;

    int W() const { return static_cast<int>(pairs.size()); }

    // Symmetric closure, no self-loops, no duplicate pairs, indices in
    // range. Throws on violation.
    void validate() const;
};

// One edge per adjacent sensor pair along a road; weight = inverse
// along-road distance scaled by the maximum inverse distance, so weights
// lie in (0, 1].
EdgeSet geography_edges(const RoadNetwork& net);

// Mean daily profile (length N) per sensor over observed entries.
Tensor mean_daily_profiles(const TrafficSeriesTensor& t);

struct KMeansResult {
    std::vector<int> assignment; // point -> cluster
    Tensor centers;              // (k, F)
    int iterations = 0;
};

// Lloyd iterations with seeded k-means++ initialization and an iteration
// cap; ties always break toward the lower index.
KMeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iters = 100);

int default_cluster_count(int n_sensors);

// Profile-similarity edges: cluster sensors by mean daily profile, link
// each sensor to its n_neighbors nearest same-cluster sensors (deficits
// filled from the nearest out-of-cluster sensors), weight
// exp(-d^2 / sigma^2) with sigma = median intra-cluster pairwise distance.
// `split` guards against leakage: train_truth must cover exactly the
// training days.
EdgeSet pattern_edges(const TrafficSeriesTensor& train_truth, const DatasetSplit& split,
                      int n_clusters, int n_neighbors, std::uint64_t seed);

// Union preserving features; a pair present in both sets keeps one entry
// with both type bits and the larger weight.
EdgeSet merge_edges(const EdgeSet& geo, const EdgeSet& pattern);

// Text file, one line per undirected edge: `i j type_geo type_pat weight`.
void save_edges(const EdgeSet& edges, const std::string& path);
EdgeSet load_edges(const std::string& path);

} // namespace gttdi
