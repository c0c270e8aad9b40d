#include "gttdi/semantic_embedding.hpp"

#include "gttdi/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gttdi {

namespace {

const char* kMonthNames[12] = {"jan", "feb", "mar", "apr", "may", "jun",
                               "jul", "aug", "sep", "oct", "nov", "dec"};
const char* kDowNames[7] = {"mon", "tue", "wed", "thu", "fri", "sat", "sun"};

} // namespace

std::vector<int> road_ordinals(const RoadNetwork& net) {
    // Rank sensors within each road by (position, index).
    std::vector<int> order(static_cast<std::size_t>(net.size()));
    for (int i = 0; i < net.size(); ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&net](int a, int b) {
        const auto& sa = net.sensors[static_cast<std::size_t>(a)];
        const auto& sb = net.sensors[static_cast<std::size_t>(b)];
        return std::tie(sa.road_id, sa.position, a) < std::tie(sb.road_id, sb.position, b);
    });
    std::vector<int> ordinal(static_cast<std::size_t>(net.size()), 0);
    std::string current_road;
    int rank = 0;
    for (int idx : order) {
        const auto& s = net.sensors[static_cast<std::size_t>(idx)];
        if (s.road_id != current_road) {
            current_road = s.road_id;
            rank = 0;
        }
        ordinal[static_cast<std::size_t>(idx)] = ++rank;
    }
    return ordinal;
}

SemanticDescription describe(int sample_index, int sensor_index, const RoadNetwork& net,
                             const Calendar& cal, int slices_per_day, int total_samples) {
    if (sample_index < 0 || sample_index >= total_samples)
        throw std::invalid_argument("sample index " + std::to_string(sample_index) +
                                    " out of range [0, " + std::to_string(total_samples) + ")");
    if (sensor_index < 0 || sensor_index >= net.size())
        throw std::invalid_argument("sensor index " + std::to_string(sensor_index) +
                                    " out of range for " + std::to_string(net.size()) +
                                    " sensors");
    const Sensor& s = net.sensors[static_cast<std::size_t>(sensor_index)];
    const int day = sample_index / slices_per_day;
    const int slice = sample_index % slices_per_day;
    const CivilDate date = cal.date_of(day);
    const int dow = cal.weekday_of(day);
    const int ordinal = road_ordinals(net)[static_cast<std::size_t>(sensor_index)];

    SemanticDescription d;
    d.tokens[0] = "road_" + s.road_id;
    d.tokens[1] = "sensor_" + s.sensor_id;
    d.tokens[2] = "pos_" + s.road_id + "_" + std::to_string(ordinal);
    d.tokens[3] = "dir_" + direction_name(s.direction);
    d.tokens[4] = std::string("month_") + kMonthNames[date.month - 1];
    d.tokens[5] = "day_" + std::to_string(date.day);
    d.tokens[6] = std::string("dow_") + kDowNames[dow];
    d.tokens[7] = "slice_" + std::to_string(slice + 1);
    return d;
}

int EmbeddingTable::row_of(const std::string& token) const {
    auto it = index.find(token);
    if (it == index.end())
        throw std::invalid_argument("token '" + token + "' is not in the vocabulary");
    return it->second;
}

std::vector<std::string> build_vocabulary(const RoadNetwork& net, const Calendar& cal,
                                          int slices_per_day, int total_samples) {
    std::vector<std::string> vocab;
    std::unordered_map<std::string, int> seen;
    for (int k = 0; k < total_samples; ++k)
        for (int s = 0; s < net.size(); ++s) {
            SemanticDescription d = describe(k, s, net, cal, slices_per_day, total_samples);
            for (auto& t : d.tokens)
                if (seen.emplace(t, static_cast<int>(vocab.size())).second)
                    vocab.push_back(std::move(t));
        }
    if (vocab.empty()) throw std::invalid_argument("empty vocabulary");
    return vocab;
}

EmbeddingTable train_skipgram(const std::vector<SemanticDescription>& corpus, int f_s,
                              int epochs, int negatives, std::uint64_t seed,
                              double learning_rate) {
    if (corpus.empty()) throw std::invalid_argument("empty skip-gram corpus");
    if (f_s < 1) throw std::invalid_argument("embedding width must be positive");

    EmbeddingTable table;
    std::vector<std::int64_t> counts;
    for (const auto& sent : corpus)
        for (const auto& t : sent.tokens) {
            auto [it, fresh] = table.index.emplace(t, table.vocab_size());
            if (fresh) {
                table.tokens.push_back(t);
                counts.push_back(0);
            }
            ++counts[static_cast<std::size_t>(it->second)];
        }
    const int v = table.vocab_size();

    // Sentences as row-index arrays.
    std::vector<std::array<int, kSemanticLabels>> sents(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (int j = 0; j < kSemanticLabels; ++j)
            sents[i][static_cast<std::size_t>(j)] = table.index[corpus[i].tokens[static_cast<std::size_t>(j)]];

    // Unigram^0.75 noise distribution, cumulative for inverse sampling.
    std::vector<double> cum(static_cast<std::size_t>(v));
    double total = 0.0;
    for (int i = 0; i < v; ++i) {
        total += std::pow(static_cast<double>(counts[static_cast<std::size_t>(i)]), 0.75);
        cum[static_cast<std::size_t>(i)] = total;
    }

    Rng rng = Rng::stream(seed, "skipgram");
    Tensor in({v, f_s});
    Tensor out_w({v, f_s}, 0.0);
    const double half_range = 0.5 / f_s;
    for (double& x : in.data) x = rng.uniform(-half_range, half_range);

    auto sample_noise = [&]() {
        const double r = rng.uniform() * total;
        return static_cast<int>(std::lower_bound(cum.begin(), cum.end(), r) - cum.begin());
    };

    const std::int64_t pairs_per_epoch =
        static_cast<std::int64_t>(sents.size()) * kSemanticLabels * (kSemanticLabels - 1);
    const std::int64_t total_pairs = pairs_per_epoch * epochs;
    std::int64_t done = 0;
    std::vector<double> accum(static_cast<std::size_t>(f_s));
    std::vector<std::size_t> order(sents.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Fresh deterministic sentence order per epoch.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(i))]);

        for (std::size_t si : order) {
            const auto& sent = sents[si];
            for (int ci = 0; ci < kSemanticLabels; ++ci) {
                const int center = sent[static_cast<std::size_t>(ci)];
                double* vw = &in.data[static_cast<std::size_t>(center) * f_s];
                for (int xi = 0; xi < kSemanticLabels; ++xi) {
                    if (xi == ci) continue;
                    const double lr = std::max(
                        learning_rate * (1.0 - static_cast<double>(done) / total_pairs),
                        learning_rate * 1e-4);
                    ++done;
                    const int context = sent[static_cast<std::size_t>(xi)];
                    std::fill(accum.begin(), accum.end(), 0.0);
                    for (int neg = 0; neg <= negatives; ++neg) {
                        int target;
                        double label;
                        if (neg == 0) {
                            target = context;
                            label = 1.0;
                        } else {
                            target = sample_noise();
                            if (target == context) continue;
                            label = 0.0;
                        }
                        double* u = &out_w.data[static_cast<std::size_t>(target) * f_s];
                        double dot = 0.0;
                        for (int d = 0; d < f_s; ++d) dot += vw[d] * u[d];
                        const double g = lr * (label - 1.0 / (1.0 + std::exp(-dot)));
                        for (int d = 0; d < f_s; ++d) {
                            accum[static_cast<std::size_t>(d)] += g * u[d];
                            u[d] += g * vw[d];
                        }
                    }
                    for (int d = 0; d < f_s; ++d) vw[d] += accum[static_cast<std::size_t>(d)];
                }
            }
        }
    }

    // Cap vector norms so downstream layers see bounded inputs.
    for (int i = 0; i < v; ++i) {
        double* row = &in.data[static_cast<std::size_t>(i) * f_s];
        double norm = 0.0;
        for (int d = 0; d < f_s; ++d) norm += row[d] * row[d];
        norm = std::sqrt(norm);
        if (norm > 1.0)
            for (int d = 0; d < f_s; ++d) row[d] /= norm;
    }
    table.vectors = std::move(in);
    return table;
}

EmbeddingTable hash_embedding_table(const std::vector<std::string>& vocab, int f_s) {
    if (vocab.empty()) throw std::invalid_argument("empty vocabulary");
    if (f_s < 1) throw std::invalid_argument("embedding width must be positive");
    EmbeddingTable table;
    table.vectors = Tensor({static_cast<int>(vocab.size()), f_s});
    for (const auto& t : vocab) {
        if (!table.index.emplace(t, table.vocab_size()).second)
            throw std::invalid_argument("duplicate token '" + t + "' in vocabulary");
        table.tokens.push_back(t);
    }
    for (int i = 0; i < table.vocab_size(); ++i) {
        Rng rng = Rng::stream(Rng::hash_str(table.tokens[static_cast<std::size_t>(i)]),
                              "hash_embed");
        double* row = &table.vectors.data[static_cast<std::size_t>(i) * f_s];
        double norm = 0.0;
        for (int d = 0; d < f_s; ++d) {
            row[d] = rng.normal();
            norm += row[d] * row[d];
        }
        norm = std::sqrt(std::max(norm, 1e-30));
        for (int d = 0; d < f_s; ++d) row[d] /= norm;
    }
    return table;
}

Tensor assemble_semantic_tensor(const RoadNetwork& net, const Calendar& cal, int total_samples,
                                int slices_per_day, const EmbeddingTable& table) {
    const int S = net.size();
    const int f_s = table.fs();
    const int fprime = kSemanticLabels * f_s;
    Tensor out({total_samples, S, fprime});

    // Tokens only change with (day, slice, sensor); cache sensor-static
    // rows per sample to keep this linear in K*S.
    const std::vector<int> ord = road_ordinals(net);
    for (int k = 0; k < total_samples; ++k) {
        const int day = k / slices_per_day;
        const int slice = k % slices_per_day;
        const CivilDate date = cal.date_of(day);
        const int dow = cal.weekday_of(day);
        const std::string month_tok = std::string("month_") + kMonthNames[date.month - 1];
        const std::string day_tok = "day_" + std::to_string(date.day);
        const std::string dow_tok = std::string("dow_") + kDowNames[dow];
        const std::string slice_tok = "slice_" + std::to_string(slice + 1);
        for (int s = 0; s < S; ++s) {
            const Sensor& sen = net.sensors[static_cast<std::size_t>(s)];
            const std::array<int, kSemanticLabels> rows = {
                table.row_of("road_" + sen.road_id),
                table.row_of("sensor_" + sen.sensor_id),
                table.row_of("pos_" + sen.road_id + "_" +
                             std::to_string(ord[static_cast<std::size_t>(s)])),
                table.row_of("dir_" + direction_name(sen.direction)),
                table.row_of(month_tok),
                table.row_of(day_tok),
                table.row_of(dow_tok),
                table.row_of(slice_tok)};
            double* dst = &out.data[(static_cast<std::size_t>(k) * S + s) * fprime];
            for (int lbl = 0; lbl < kSemanticLabels; ++lbl)
                std::copy_n(&table.vectors.data[static_cast<std::size_t>(rows[static_cast<std::size_t>(lbl)]) * f_s],
                            f_s, dst + lbl * f_s);
        }
    }
    return out;
}

Tensor semantic_label_prefix(const Tensor& p, int labels, int f_s) {
    if (p.ndim() != 3) {
        throw std::invalid_argument("semantic tensor must be (K, S, W), got " + shape_str(p.shape));
    }
    if (labels < 0 || f_s < 1 || static_cast<std::int64_t>(labels) * f_s > p.dim(2)) {
        throw std::invalid_argument("cannot keep " + std::to_string(labels) + " labels of width " +
                                    std::to_string(f_s) + " from rows of width " + std::to_string(p.dim(2)));
    }
    const int K = p.dim(0), S = p.dim(1), full_w = p.dim(2), w = labels * f_s;
    Tensor out({K, S, w});
    for (std::int64_t r = 0; r < static_cast<std::int64_t>(K) * S; ++r) {
        std::copy_n(p.data.begin() + r * full_w, w, out.data.begin() + r * w);
    }
    return out;
}

void save_embedding_table(const EmbeddingTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write embedding file " + path);
    out << table.vocab_size() << " " << table.fs() << "\n";
    char buf[32];
    for (int i = 0; i < table.vocab_size(); ++i) {
        out << table.tokens[static_cast<std::size_t>(i)];
        for (int d = 0; d < table.fs(); ++d) {
            std::snprintf(buf, sizeof buf, " %.17g",
                          table.vectors.data[static_cast<std::size_t>(i) * table.fs() + d]);
            out << buf;
        }
        out << "\n";
    }
}

EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file " + path);
    int v = 0, f_s = 0;
    if (!(in >> v >> f_s) || v < 1 || f_s < 1)
        throw std::runtime_error(path + ": malformed embedding header");
    EmbeddingTable table;
    table.vectors = Tensor({v, f_s});
    for (int i = 0; i < v; ++i) {
        std::string tok;
        if (!(in >> tok)) throw std::runtime_error(path + ": truncated embedding table");
        if (!table.index.emplace(tok, i).second)
            throw std::runtime_error(path + ": duplicate token '" + tok + "'");
        table.tokens.push_back(tok);
        for (int d = 0; d < f_s; ++d)
            if (!(in >> table.vectors.data[static_cast<std::size_t>(i) * f_s + d]))
                throw std::runtime_error(path + ": truncated embedding row for '" + tok + "'");
    }
    return table;
}

} // namespace gttdi
