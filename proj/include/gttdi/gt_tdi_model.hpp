#pragma once

#include "gttdi/data_model.hpp"
#include "gttdi/graph_construction.hpp"
#include "gttdi/ops.hpp"
#include "gttdi/rng.hpp"
#include "gttdi/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gttdi {

// Widths and hyperparameters of one model instance. The semantic module is
// disabled entirely when semantic_labels or f_s is zero, in which case the
// encoder runs on the graph features alone.
struct ModelConfig {
    int S = 0; // sensors
    int L = 0; // points per day-slice
    int M = 1; // slices per day

    int f_s = 16;            // per-token embedding width
    int semantic_labels = 8; // active labels; F' = semantic_labels * f_s

    int g1_heads = 4, g1_dim = 16; // concatenating layer, out = g1_heads * g1_dim
    int g2_heads = 4;              // averaging layer, head width H_G
    int H_G = 64;
    int H_P = 64;
    int conv_channels = 16; // mid channels between the two convolutions
    int conv_kernel = 3;
    int encoder_heads = 4;
    int encoder_ff = 0;     // feed-forward width; 0 means 4 * H_T
    int output_hidden = 64;

    double lrelu_slope = 0.01;
    double dropout_rate = 0.1;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    bool semantic_enabled() const { return semantic_labels > 0 && f_s > 0 && H_P > 0; }
    int f_prime() const { return semantic_labels * f_s; }
    int graph1_out() const { return g1_heads * g1_dim; }
    int H_T() const { return H_G + (semantic_enabled() ? H_P : 0); }
    int ff_width() const { return encoder_ff > 0 ? encoder_ff : 4 * H_T(); }

    // Dimensional chain checks (divisibility, positivity). Throws.
    void validate() const;
};

// All learnable tensors keyed by name, plus frozen normalization state and
// batch-norm running buffers.
struct GTTDIParams {
    ModelConfig config;
    NormStats norm;
    std::map<std::string, Tensor> tensors;
    Tensor bn_mean, bn_var; // running statistics, not trained

    std::int64_t parameter_count() const;
};

// Xavier-uniform weights, zero biases; deterministic per (seed, tensor name).
GTTDIParams init_params(const ModelConfig& config, std::uint64_t seed);

// Versioned binary blob; round-trips bit-exactly.
void save_checkpoint(const GTTDIParams& params, const std::string& path);
GTTDIParams load_checkpoint(const std::string& path);

// Message-passing index derived from an EdgeSet: directed pairs plus one
// self-loop per node with an all-zero feature row, so every node has a
// non-empty in-neighborhood.
struct GraphIndex {
    std::vector<int> src, dst;
    Tensor features; // (#entries, F_e)
    int n_nodes = 0;
};

GraphIndex build_graph_index(const EdgeSet& edges, int n_nodes);

// Parameters bound onto a tape as leaves for one forward/backward pass.
class BoundParams {
public:
    BoundParams(Tape& tape, GTTDIParams& params, bool requires_grad);

    Var operator[](const std::string& name) const; // throws on unknown name
    Tape& tape() const { return *tape_; }
    GTTDIParams& params() const { return *params_; }

private:
    Tape* tape_;
    GTTDIParams* params_;
    std::map<std::string, Var> vars_;
};

// One sample (S, H_in) -> (S, heads * dim); multi-head edge-aware attention
// with scores normalized over each node's in-neighborhood. When `alphas` is
// given it receives one attention vector per head, aligned with graph.src.
Var graph_attention_layer(const BoundParams& bp, Var h, const GraphIndex& graph,
                          const std::string& prefix, int heads, int dim,
                          std::vector<Var>* alphas = nullptr);

// Head-averaging variant with the gated residual: out = (1-beta) hhat + beta r.
Var graph_output_layer(const BoundParams& bp, Var h, const GraphIndex& graph,
                       const std::string& prefix, int heads, int dim,
                       std::vector<Var>* alphas = nullptr);

// Two stacked graph layers per sample: (S, L+1) -> (S, H_G).
Var graph_module(const BoundParams& bp, Var y_with_mask, const GraphIndex& graph);

// Two 1-D convolutions over the label channels with a projected residual:
// (S, F') -> (S, H_P). Dropout acts on the residual branch.
Var semantic_module(const BoundParams& bp, Var p, bool train, Rng& dropout_rng);

// Batch normalization over all rows, then per-sample encoder over the
// sensor tokens and the two output linears: (n_samples*S, H_T) -> (n*S, L).
Var transformer_module(const BoundParams& bp, Var yt, int n_samples, bool train);

struct BatchInput {
    Tensor y;                     // (K_b, S, L) normalized, zero-filled
    std::vector<std::uint8_t> mask; // K_b * S * L observation bits
    Tensor p;                     // (K_b, S, F'), ignored when semantic off
};

// Node features for one sample: values plus an observed-fraction channel.
Tensor make_node_features(const BatchInput& in, int sample);

// Full network over a batch: -> (K_b * S, L), normalized scale.
Var forward_batch(const BoundParams& bp, const BatchInput& in, const GraphIndex& graph,
                  bool train, Rng& dropout_rng);

// Eval-mode full reconstruction in data units: (K, S, L). The input tensor
// is normalized with params.norm internally; P may be empty when the
// semantic module is disabled.
Tensor forward(GTTDIParams& params, const GraphIndex& graph, const TrafficSeriesTensor& y_in,
               const Tensor& p);

// Per-head attention weights of one layer on one sample, for inspection.
std::vector<Tensor> attention_weights(GTTDIParams& params, const GraphIndex& graph,
                                      const Tensor& node_features, int layer);

// Symbolic shape walk of the whole architecture using 64-bit arithmetic
// only; no tensor is allocated. Throws if the dimensional chain is broken.
struct ShapeReport {
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> stages;
};

ShapeReport shape_contract(const ModelConfig& config, std::int64_t K, std::int64_t S);

} // namespace gttdi
