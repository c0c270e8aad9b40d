#pragma once

#include "gttdi/data_model.hpp"
#include "gttdi/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace gttdi {

inline constexpr int kSemanticLabels = 8;

// Eight tokens, fixed label order: road, sensor, position bucket, flow
// direction, month, day of month, day of week, slice.
struct SemanticDescription {
    std::array<std::string, kSemanticLabels> tokens;
};

// 1-based ordinal of each sensor along its road (by position, ties by
// index), used for the position bucket token.
std::vector<int> road_ordinals(const RoadNetwork& net);

// Deterministic metadata sentence for one (sample, sensor) coordinate.
// Depends only on topology and calendar, never on traffic values.
SemanticDescription describe(int sample_index, int sensor_index, const RoadNetwork& net,
                             const Calendar& cal, int slices_per_day, int total_samples);

struct EmbeddingTable {
    std::vector<std::string> tokens;            // row -> token
    std::unordered_map<std::string, int> index; // token -> row
    Tensor vectors;                             // (|V|, F_s)

    int vocab_size() const { return static_cast<int>(tokens.size()); }
    int fs() const { return vectors.ndim() == 2 ? vectors.shape[1] : 0; }
    int row_of(const std::string& token) const; // throws on out-of-vocabulary
};

// Every token of every (sample, sensor) description, in first-seen order.
std::vector<std::string> build_vocabulary(const RoadNetwork& net, const Calendar& cal,
                                          int slices_per_day, int total_samples);

// Skip-gram with negative sampling over full-sentence windows; vectors are
// clipped to unit L2 norm at the end. Deterministic given the seed.
EmbeddingTable train_skipgram(const std::vector<SemanticDescription>& corpus, int f_s,
                              int epochs, int negatives, std::uint64_t seed,
                              double learning_rate = 0.025);

// Hash-seeded pseudo-random unit vectors; a fast deterministic stand-in
// for the trained table in tests.
EmbeddingTable hash_embedding_table(const std::vector<std::string>& vocab, int f_s);

// Concatenates the 8 label vectors per (sample, sensor): (K, S, 8*F_s).
Tensor assemble_semantic_tensor(const RoadNetwork& net, const Calendar& cal, int total_samples,
                                int slices_per_day, const EmbeddingTable& table);

// Keeps the first `labels` per-label blocks of each (sample, sensor) row:
// (K, S, labels*f_s). Used when a model runs on a label-count prefix.
Tensor semantic_label_prefix(const Tensor& p, int labels, int f_s);

// Text format: `|V| F_s` header line, then `token v1 ... vF_s` per row.
void save_embedding_table(const EmbeddingTable& table, const std::string& path);
EmbeddingTable load_embedding_table(const std::string& path);

} // namespace gttdi
