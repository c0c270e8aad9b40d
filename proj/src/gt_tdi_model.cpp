#include "gttdi/gt_tdi_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace gttdi {

namespace {

enum class InitKind { Weight, Conv, Bias, Gain };

// Enumerates every learnable tensor of a configuration in a fixed order.
// Initialization, checkpointing and validation all share this registry so
// they can never disagree about what a model contains.
void for_each_tensor(const ModelConfig& c,
                     const std::function<void(const std::string&, std::vector<int>, InitKind)>& fn) {
    auto head_block = [&](const std::string& prefix, int heads, int in, int dim) {
        for (int h = 0; h < heads; ++h) {
            std::string p = prefix + ".h" + std::to_string(h) + ".";
            fn(p + "Wq", {in, dim}, InitKind::Weight);
            fn(p + "bq", {dim}, InitKind::Bias);
            fn(p + "Wk", {in, dim}, InitKind::Weight);
            fn(p + "bk", {dim}, InitKind::Bias);
            fn(p + "Wv", {in, dim}, InitKind::Weight);
            fn(p + "bv", {dim}, InitKind::Bias);
        }
        fn(prefix + ".We", {kEdgeFeatureDim, dim}, InitKind::Weight);
        fn(prefix + ".be", {dim}, InitKind::Bias);
    };

    head_block("g1", c.g1_heads, c.L + 1, c.g1_dim);
    head_block("g2", c.g2_heads, c.graph1_out(), c.H_G);
    fn("g2.Wr", {c.graph1_out(), c.H_G}, InitKind::Weight);
    fn("g2.Wg", {3 * c.H_G, 1}, InitKind::Weight);
    fn("g2.bg", {1}, InitKind::Bias);

    if (c.semantic_enabled()) {
        int c2 = c.H_P / c.f_s;
        fn("sem.conv1.W", {c.conv_channels, c.semantic_labels, c.conv_kernel}, InitKind::Conv);
        fn("sem.conv1.b", {c.conv_channels}, InitKind::Bias);
        fn("sem.conv2.W", {c2, c.conv_channels, c.conv_kernel}, InitKind::Conv);
        fn("sem.conv2.b", {c2}, InitKind::Bias);
        fn("sem.Wres", {c.f_prime(), c.H_P}, InitKind::Weight);
    }

    int ht = c.H_T();
    fn("bn.gamma", {ht}, InitKind::Gain);
    fn("bn.beta", {ht}, InitKind::Bias);

    int dh = ht / c.encoder_heads;
    for (int h = 0; h < c.encoder_heads; ++h) {
        std::string p = "enc.h" + std::to_string(h) + ".";
        fn(p + "Wq", {ht, dh}, InitKind::Weight);
        fn(p + "bq", {dh}, InitKind::Bias);
        fn(p + "Wk", {ht, dh}, InitKind::Weight);
        fn(p + "bk", {dh}, InitKind::Bias);
        fn(p + "Wv", {ht, dh}, InitKind::Weight);
        fn(p + "bv", {dh}, InitKind::Bias);
    }
    fn("enc.Wo", {ht, ht}, InitKind::Weight);
    fn("enc.bo", {ht}, InitKind::Bias);
    fn("enc.ln1.g", {ht}, InitKind::Gain);
    fn("enc.ln1.b", {ht}, InitKind::Bias);
    fn("enc.ff.W1", {ht, c.ff_width()}, InitKind::Weight);
    fn("enc.ff.b1", {c.ff_width()}, InitKind::Bias);
    fn("enc.ff.W2", {c.ff_width(), ht}, InitKind::Weight);
    fn("enc.ff.b2", {ht}, InitKind::Bias);
    fn("enc.ln2.g", {ht}, InitKind::Gain);
    fn("enc.ln2.b", {ht}, InitKind::Bias);

    fn("out.W1", {ht, c.output_hidden}, InitKind::Weight);
    fn("out.b1", {c.output_hidden}, InitKind::Bias);
    fn("out.W2", {c.output_hidden, c.L}, InitKind::Weight);
    fn("out.b2", {c.L}, InitKind::Bias);
}

void require_positive(int v, const char* what) {
    if (v < 1) {
        throw std::invalid_argument(std::string("model config: ") + what + " must be positive, got " +
                                    std::to_string(v));
    }
}

Tensor init_tensor(const std::vector<int>& shape, InitKind kind, Rng rng) {
    Tensor t = Tensor::zeros(shape);
    switch (kind) {
    case InitKind::Bias:
        break;
    case InitKind::Gain:
        std::fill(t.data.begin(), t.data.end(), 1.0);
        break;
    case InitKind::Weight:
    case InitKind::Conv: {
        std::int64_t fan_in, fan_out;
        if (kind == InitKind::Conv) {
            // (out_channels, in_channels, kernel)
            fan_in = static_cast<std::int64_t>(shape[1]) * shape[2];
            fan_out = static_cast<std::int64_t>(shape[0]) * shape[2];
        } else {
            fan_in = shape[0];
            fan_out = shape.size() > 1 ? shape[1] : 1;
        }
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : t.data) v = rng.uniform(-bound, bound);
        break;
    }
    }
    return t;
}

// ---- checkpoint byte helpers -------------------------------------------

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

void put_f64(std::ostream& os, double v) {
    auto u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::int32_t get_i32(std::istream& is) { return static_cast<std::int32_t>(get_u32(is)); }

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint file truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_i32(os, d);
    for (double v : t.data) put_f64(os, v);
}

std::pair<std::string, Tensor> get_tensor(std::istream& is) {
    std::uint32_t name_len = get_u32(is);
    if (name_len > 4096) throw std::runtime_error("checkpoint file corrupt: absurd tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw std::runtime_error("checkpoint file truncated");
    std::uint32_t ndim = get_u32(is);
    if (ndim > 8) throw std::runtime_error("checkpoint file corrupt: absurd tensor rank");
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = get_i32(is);
    Tensor t(shape);
    for (double& v : t.data) v = get_f64(is);
    return {std::move(name), std::move(t)};
}

constexpr char kCheckpointMagic[4] = {'G', 'T', 'T', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

} // namespace

void ModelConfig::validate() const {
    require_positive(S, "S");
    require_positive(L, "L");
    require_positive(M, "M");
    require_positive(g1_heads, "g1_heads");
    require_positive(g1_dim, "g1_dim");
    require_positive(g2_heads, "g2_heads");
    require_positive(H_G, "H_G");
    require_positive(encoder_heads, "encoder_heads");
    require_positive(output_hidden, "output_hidden");
    if (semantic_labels < 0 || semantic_labels > 8) {
        throw std::invalid_argument("model config: semantic_labels must lie in [0, 8], got " +
                                    std::to_string(semantic_labels));
    }
    if (semantic_enabled()) {
        require_positive(f_s, "f_s");
        require_positive(conv_channels, "conv_channels");
        if (conv_kernel < 1 || conv_kernel % 2 == 0) {
            throw std::invalid_argument("model config: conv_kernel must be odd and positive, got " +
                                        std::to_string(conv_kernel));
        }
        if (H_P % f_s != 0) {
            throw std::invalid_argument("model config: H_P (" + std::to_string(H_P) +
                                        ") must be a multiple of f_s (" + std::to_string(f_s) + ")");
        }
    }
    if (H_T() % encoder_heads != 0) {
        throw std::invalid_argument("model config: encoder_heads (" + std::to_string(encoder_heads) +
                                    ") must divide H_T (" + std::to_string(H_T()) + ")");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw std::invalid_argument("model config: dropout_rate must lie in [0, 1)");
    }
    if (!(lrelu_slope > 0.0)) throw std::invalid_argument("model config: lrelu_slope must be positive");
    if (!(bn_eps > 0.0)) throw std::invalid_argument("model config: bn_eps must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) {
        throw std::invalid_argument("model config: bn_momentum must lie in [0, 1]");
    }
}

std::int64_t GTTDIParams::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    return n;
}

GTTDIParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    GTTDIParams p;
    p.config = config;
    for_each_tensor(config, [&](const std::string& name, std::vector<int> shape, InitKind kind) {
        p.tensors.emplace(name, init_tensor(shape, kind, Rng::stream(seed, "init/" + name)));
    });
    p.bn_mean = Tensor::zeros({config.H_T()});
    p.bn_var = Tensor::full({config.H_T()}, 1.0);
    return p;
}

void save_checkpoint(const GTTDIParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 4);
    put_u32(os, kCheckpointVersion);

    const ModelConfig& c = params.config;
    for (int v : {c.S, c.L, c.M, c.f_s, c.semantic_labels, c.g1_heads, c.g1_dim, c.g2_heads,
                  c.H_G, c.H_P, c.conv_channels, c.conv_kernel, c.encoder_heads, c.encoder_ff,
                  c.output_hidden}) {
        put_i32(os, v);
    }
    for (double v : {c.lrelu_slope, c.dropout_rate, c.bn_eps, c.bn_momentum}) put_f64(os, v);
    put_f64(os, params.norm.vmin);
    put_f64(os, params.norm.vmax);

    put_u32(os, static_cast<std::uint32_t>(params.tensors.size()));
    for (const auto& [name, t] : params.tensors) put_tensor(os, name, t);
    put_tensor(os, "bn.running_mean", params.bn_mean);
    put_tensor(os, "bn.running_var", params.bn_var);
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

GTTDIParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw std::runtime_error("not a model checkpoint: " + path);
    }
    std::uint32_t version = get_u32(is);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }

    GTTDIParams p;
    ModelConfig& c = p.config;
    for (int* f : {&c.S, &c.L, &c.M, &c.f_s, &c.semantic_labels, &c.g1_heads, &c.g1_dim,
                   &c.g2_heads, &c.H_G, &c.H_P, &c.conv_channels, &c.conv_kernel,
                   &c.encoder_heads, &c.encoder_ff, &c.output_hidden}) {
        *f = get_i32(is);
    }
    for (double* f : {&c.lrelu_slope, &c.dropout_rate, &c.bn_eps, &c.bn_momentum}) *f = get_f64(is);
    c.validate();
    p.norm.vmin = get_f64(is);
    p.norm.vmax = get_f64(is);

    std::map<std::string, std::vector<int>> expected;
    for_each_tensor(c, [&](const std::string& name, std::vector<int> shape, InitKind) {
        expected.emplace(name, std::move(shape));
    });

    std::uint32_t count = get_u32(is);
    if (count != expected.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                                 std::to_string(expected.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        auto [name, t] = get_tensor(is);
        auto it = expected.find(name);
        if (it == expected.end()) throw std::runtime_error("checkpoint tensor not in config: " + name);
        if (t.shape != it->second) {
            throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(t.shape) +
                                     ", config needs " + shape_str(it->second));
        }
        if (!p.tensors.emplace(name, std::move(t)).second) {
            throw std::runtime_error("checkpoint tensor duplicated: " + name);
        }
    }
    for (const char* want : {"bn.running_mean", "bn.running_var"}) {
        auto [name, t] = get_tensor(is);
        if (name != want) throw std::runtime_error("checkpoint buffer out of order: got " + name);
        if (t.shape != std::vector<int>{c.H_T()}) {
            throw std::runtime_error("checkpoint buffer " + name + " has shape " + shape_str(t.shape));
        }
        (name == "bn.running_mean" ? p.bn_mean : p.bn_var) = std::move(t);
    }
    return p;
}

GraphIndex build_graph_index(const EdgeSet& edges, int n_nodes) {
    edges.validate();
    if (n_nodes < 1) throw std::invalid_argument("graph index needs at least one node");
    if (edges.n_sensors > n_nodes) {
        throw std::invalid_argument("edge set covers " + std::to_string(edges.n_sensors) +
                                    " sensors but the graph has only " + std::to_string(n_nodes));
    }
    GraphIndex g;
    g.n_nodes = n_nodes;
    int total = edges.W() + n_nodes;
    g.src.reserve(static_cast<std::size_t>(total));
    g.dst.reserve(static_cast<std::size_t>(total));
    g.features = Tensor::zeros({total, kEdgeFeatureDim});
    for (int w = 0; w < edges.W(); ++w) {
        g.src.push_back(edges.pairs[static_cast<std::size_t>(w)].first);
        g.dst.push_back(edges.pairs[static_cast<std::size_t>(w)].second);
        for (int f = 0; f < kEdgeFeatureDim; ++f) {
            g.features.data[static_cast<std::size_t>(w * kEdgeFeatureDim + f)] =
                edges.features[static_cast<std::size_t>(w)][static_cast<std::size_t>(f)];
        }
    }
    // One self-loop per node with all-zero features keeps every
    // in-neighborhood non-empty without touching the stored edge set.
    for (int s = 0; s < n_nodes; ++s) {
        g.src.push_back(s);
        g.dst.push_back(s);
    }
    return g;
}

BoundParams::BoundParams(Tape& tape, GTTDIParams& params, bool requires_grad)
    : tape_(&tape), params_(&params) {
    for (auto& [name, t] : params.tensors) {
        vars_.emplace(name, tape.leaf(t, requires_grad));
    }
}

Var BoundParams::operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw std::logic_error("unknown parameter tensor: " + name);
    return it->second;
}

namespace {

Var affine(const BoundParams& bp, Var x, const std::string& w, const std::string& b) {
    return add(matmul(x, bp[w]), bp[b]);
}

struct HeadOut {
    Var out;
    Var alpha;
};

// One attention head over the message-passing index: scores
// exp(q_i . (k_u + e_ui) / sqrt(d)) normalized over each destination's
// incoming entries, then a weighted sum of (v_u + e_ui).
HeadOut attention_head(const BoundParams& bp, Var h, Var e, const GraphIndex& g,
                       const std::string& head_prefix, int dim) {
    Var q = affine(bp, h, head_prefix + "Wq", head_prefix + "bq");
    Var k = affine(bp, h, head_prefix + "Wk", head_prefix + "bk");
    Var v = affine(bp, h, head_prefix + "Wv", head_prefix + "bv");

    int entries = static_cast<int>(g.src.size());
    Var q_dst = gather_rows(q, g.dst);
    Var ke = add(gather_rows(k, g.src), e);
    Var logits = scale(sum_last(mul(q_dst, ke)), 1.0 / std::sqrt(static_cast<double>(dim)));
    Var scores = exp_op(reshape(logits, {entries, 1}));
    Var denom = gather_rows(scatter_add_rows(scores, g.dst, g.n_nodes), g.dst);
    Var alpha = div(scores, denom);

    Var msg = scale_rows(add(gather_rows(v, g.src), e), alpha);
    return {scatter_add_rows(msg, g.dst, g.n_nodes), alpha};
}

void check_layer_input(const Var& h, const GraphIndex& g, const std::string& prefix) {
    if (h.shape().size() != 2 || h.shape()[0] != g.n_nodes) {
        throw std::invalid_argument("graph layer " + prefix + " input must be (" +
                                    std::to_string(g.n_nodes) + ", features), got " +
                                    shape_str(h.shape()));
    }
}

// Edge encodings shared by all heads of one layer.
Var edge_encodings(const BoundParams& bp, const GraphIndex& g, const std::string& prefix) {
    Var feats = bp.tape().constant(g.features);
    return add(matmul(feats, bp[prefix + ".We"]), bp[prefix + ".be"]);
}

} // namespace

Var graph_attention_layer(const BoundParams& bp, Var h, const GraphIndex& graph,
                          const std::string& prefix, int heads, int dim,
                          std::vector<Var>* alphas) {
    check_layer_input(h, graph, prefix);
    Var e = edge_encodings(bp, graph, prefix);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int c = 0; c < heads; ++c) {
        HeadOut ho = attention_head(bp, h, e, graph, prefix + ".h" + std::to_string(c) + ".", dim);
        outs.push_back(ho.out);
        if (alphas) alphas->push_back(ho.alpha);
    }
    return heads == 1 ? outs[0] : concat(outs, 1);
}

Var graph_output_layer(const BoundParams& bp, Var h, const GraphIndex& graph,
                       const std::string& prefix, int heads, int dim,
                       std::vector<Var>* alphas) {
    check_layer_input(h, graph, prefix);
    Var e = edge_encodings(bp, graph, prefix);
    Var acc;
    for (int c = 0; c < heads; ++c) {
        HeadOut ho = attention_head(bp, h, e, graph, prefix + ".h" + std::to_string(c) + ".", dim);
        acc = (c == 0) ? ho.out : add(acc, ho.out);
        if (alphas) alphas->push_back(ho.alpha);
    }
    Var hhat = scale(acc, 1.0 / static_cast<double>(heads));

    // Gated residual: beta blends the attention output with a linear
    // projection of the layer input, computed per node from [hhat; r; hhat-r].
    Var r = matmul(h, bp[prefix + ".Wr"]);
    Var gate_in = concat({hhat, r, sub(hhat, r)}, 1);
    Var beta = sigmoid(add(matmul(gate_in, bp[prefix + ".Wg"]), bp[prefix + ".bg"]));
    Var one_minus = add_scalar(scale(beta, -1.0), 1.0);
    return add(scale_rows(hhat, one_minus), scale_rows(r, beta));
}

Var graph_module(const BoundParams& bp, Var y_with_mask, const GraphIndex& graph) {
    const ModelConfig& c = bp.params().config;
    if (y_with_mask.shape() != std::vector<int>{c.S, c.L + 1}) {
        throw std::invalid_argument("graph module input must be (" + std::to_string(c.S) + "," +
                                    std::to_string(c.L + 1) + "), got " + shape_str(y_with_mask.shape()));
    }
    Var h1 = leaky_relu(graph_attention_layer(bp, y_with_mask, graph, "g1", c.g1_heads, c.g1_dim),
                        c.lrelu_slope);
    return graph_output_layer(bp, h1, graph, "g2", c.g2_heads, c.H_G);
}

Var semantic_module(const BoundParams& bp, Var p, bool train, Rng& dropout_rng) {
    const ModelConfig& c = bp.params().config;
    if (!c.semantic_enabled()) {
        throw std::logic_error("semantic module is disabled in this configuration");
    }
    if (p.shape().size() != 2 || p.shape()[1] != c.f_prime()) {
        throw std::invalid_argument("semantic module input must be (sensors," +
                                    std::to_string(c.f_prime()) + "), got " + shape_str(p.shape()));
    }
    int sensors = p.shape()[0];
    Var x = reshape(p, {sensors, c.semantic_labels, c.f_s});
    Var mid = leaky_relu(conv1d_same(x, bp["sem.conv1.W"], bp["sem.conv1.b"]), c.lrelu_slope);
    Var conv_out = reshape(conv1d_same(mid, bp["sem.conv2.W"], bp["sem.conv2.b"]),
                           {sensors, c.H_P});
    Var residual = dropout(matmul(p, bp["sem.Wres"]), c.dropout_rate, train, dropout_rng);
    return add(conv_out, residual);
}

namespace {

// Post-norm encoder block over sensor tokens: multi-head self-attention,
// then a feed-forward pair, each followed by residual + layer norm.
Var encoder_block(const BoundParams& bp, Var x) {
    const ModelConfig& c = bp.params().config;
    int dh = c.H_T() / c.encoder_heads;
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(c.encoder_heads));
    for (int h = 0; h < c.encoder_heads; ++h) {
        std::string p = "enc.h" + std::to_string(h) + ".";
        Var q = affine(bp, x, p + "Wq", p + "bq");
        Var k = affine(bp, x, p + "Wk", p + "bk");
        Var v = affine(bp, x, p + "Wv", p + "bv");
        Var attn = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh))));
        heads.push_back(matmul(attn, v));
    }
    Var merged = c.encoder_heads == 1 ? heads[0] : concat(heads, 1);
    Var projected = add(matmul(merged, bp["enc.Wo"]), bp["enc.bo"]);
    Var x1 = layer_norm(add(x, projected), bp["enc.ln1.g"], bp["enc.ln1.b"], 1e-5);
    Var ff = add(matmul(leaky_relu(add(matmul(x1, bp["enc.ff.W1"]), bp["enc.ff.b1"]), c.lrelu_slope),
                        bp["enc.ff.W2"]),
                 bp["enc.ff.b2"]);
    return layer_norm(add(x1, ff), bp["enc.ln2.g"], bp["enc.ln2.b"], 1e-5);
}

} // namespace

Var transformer_module(const BoundParams& bp, Var yt, int n_samples, bool train) {
    const ModelConfig& c = bp.params().config;
    GTTDIParams& params = bp.params();
    if (n_samples < 1) throw std::invalid_argument("transformer module needs at least one sample");
    if (yt.shape() != std::vector<int>{n_samples * c.S, c.H_T()}) {
        throw std::invalid_argument("transformer module input must be (" +
                                    std::to_string(n_samples * c.S) + "," + std::to_string(c.H_T()) +
                                    "), got " + shape_str(yt.shape()));
    }
    Var xn = batch_norm(yt, bp["bn.gamma"], bp["bn.beta"], params.bn_mean, params.bn_var, train,
                        c.bn_momentum, c.bn_eps);
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        Var xi = slice_rows(xn, i * c.S, c.S);
        Var enc = encoder_block(bp, xi);
        Var hid = leaky_relu(add(matmul(enc, bp["out.W1"]), bp["out.b1"]), c.lrelu_slope);
        outs.push_back(add(matmul(hid, bp["out.W2"]), bp["out.b2"]));
    }
    return n_samples == 1 ? outs[0] : concat(outs, 0);
}

Tensor make_node_features(const BatchInput& in, int sample) {
    int S = in.y.dim(1), L = in.y.dim(2);
    Tensor nf({S, L + 1});
    for (int s = 0; s < S; ++s) {
        std::int64_t base = (static_cast<std::int64_t>(sample) * S + s) * L;
        int observed = 0;
        for (int l = 0; l < L; ++l) {
            nf.at2(s, l) = in.y.data[static_cast<std::size_t>(base + l)];
            observed += in.mask[static_cast<std::size_t>(base + l)] != 0 ? 1 : 0;
        }
        nf.at2(s, L) = static_cast<double>(observed) / static_cast<double>(L);
    }
    return nf;
}

Var forward_batch(const BoundParams& bp, const BatchInput& in, const GraphIndex& graph,
                  bool train, Rng& dropout_rng) {
    const ModelConfig& c = bp.params().config;
    if (in.y.ndim() != 3 || in.y.dim(1) != c.S || in.y.dim(2) != c.L) {
        throw std::invalid_argument("batch values must be (samples," + std::to_string(c.S) + "," +
                                    std::to_string(c.L) + "), got " + shape_str(in.y.shape));
    }
    if (static_cast<std::int64_t>(in.mask.size()) != in.y.numel()) {
        throw std::invalid_argument("batch mask size does not match the value tensor");
    }
    int kb = in.y.dim(0);
    if (kb < 1) throw std::invalid_argument("batch must hold at least one sample");
    if (graph.n_nodes != c.S) {
        throw std::invalid_argument("graph covers " + std::to_string(graph.n_nodes) +
                                    " nodes, model expects " + std::to_string(c.S));
    }
    if (c.semantic_enabled() &&
        in.p.shape != std::vector<int>{kb, c.S, c.f_prime()}) {
        throw std::invalid_argument("batch embeddings must be (" + std::to_string(kb) + "," +
                                    std::to_string(c.S) + "," + std::to_string(c.f_prime()) +
                                    "), got " + shape_str(in.p.shape));
    }

    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(kb));
    for (int k = 0; k < kb; ++k) {
        Var nodes = bp.tape().constant(make_node_features(in, k));
        Var g = graph_module(bp, nodes, graph);
        if (c.semantic_enabled()) {
            Tensor pk({c.S, c.f_prime()});
            std::int64_t base = static_cast<std::int64_t>(k) * c.S * c.f_prime();
            std::copy_n(in.p.data.begin() + base, pk.numel(), pk.data.begin());
            Var sem = semantic_module(bp, bp.tape().constant(std::move(pk)), train, dropout_rng);
            rows.push_back(concat({g, sem}, 1));
        } else {
            rows.push_back(g);
        }
    }
    Var yt = kb == 1 ? rows[0] : concat(rows, 0);
    return transformer_module(bp, yt, kb, train);
}

Tensor forward(GTTDIParams& params, const GraphIndex& graph, const TrafficSeriesTensor& y_in,
               const Tensor& p) {
    const ModelConfig& c = params.config;
    c.validate();
    y_in.validate();
    if (y_in.S() != c.S || y_in.L() != c.L) {
        throw std::invalid_argument("input tensor is (" + std::to_string(y_in.K()) + "," +
                                    std::to_string(y_in.S()) + "," + std::to_string(y_in.L()) +
                                    "), model expects S=" + std::to_string(c.S) +
                                    " L=" + std::to_string(c.L));
    }
    if (c.semantic_enabled() && p.shape != std::vector<int>{y_in.K(), c.S, c.f_prime()}) {
        throw std::invalid_argument("embedding tensor must be (" + std::to_string(y_in.K()) + "," +
                                    std::to_string(c.S) + "," + std::to_string(c.f_prime()) +
                                    "), got " + shape_str(p.shape));
    }

    Tensor out({y_in.K(), y_in.S(), y_in.L()});
    Rng rng = Rng::stream(0, "eval/dropout"); // never consumed in eval mode
    const int chunk = 8;
    for (int k0 = 0; k0 < y_in.K(); k0 += chunk) {
        int kb = std::min(chunk, y_in.K() - k0);
        BatchInput in;
        in.y = Tensor({kb, c.S, c.L});
        in.mask.resize(static_cast<std::size_t>(in.y.numel()));
        for (int k = 0; k < kb; ++k) {
            for (int s = 0; s < c.S; ++s) {
                for (int l = 0; l < c.L; ++l) {
                    std::int64_t src = y_in.flat(k0 + k, s, l);
                    std::int64_t dst = (static_cast<std::int64_t>(k) * c.S + s) * c.L + l;
                    bool obs = y_in.mask[static_cast<std::size_t>(src)] != 0;
                    in.mask[static_cast<std::size_t>(dst)] = obs ? 1 : 0;
                    in.y.data[static_cast<std::size_t>(dst)] =
                        obs ? params.norm.normalize(y_in.values.data[static_cast<std::size_t>(src)]) : 0.0;
                }
            }
        }
        if (c.semantic_enabled()) {
            in.p = Tensor({kb, c.S, c.f_prime()});
            std::int64_t base = static_cast<std::int64_t>(k0) * c.S * c.f_prime();
            std::copy_n(p.data.begin() + base, in.p.numel(), in.p.data.begin());
        }
        Tape tape;
        BoundParams bp(tape, params, false);
        Var yhat = forward_batch(bp, in, graph, false, rng);
        const Tensor& v = yhat.value();
        for (std::int64_t i = 0; i < v.numel(); ++i) {
            out.data[static_cast<std::size_t>(k0) * c.S * c.L + static_cast<std::size_t>(i)] =
                params.norm.denormalize(v.data[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

std::vector<Tensor> attention_weights(GTTDIParams& params, const GraphIndex& graph,
                                      const Tensor& node_features, int layer) {
    const ModelConfig& c = params.config;
    Tape tape;
    BoundParams bp(tape, params, false);
    Var h = tape.constant(node_features);
    std::vector<Var> alphas;
    if (layer == 1) {
        graph_attention_layer(bp, h, graph, "g1", c.g1_heads, c.g1_dim, &alphas);
    } else if (layer == 2) {
        graph_output_layer(bp, h, graph, "g2", c.g2_heads, c.H_G, &alphas);
    } else {
        throw std::invalid_argument("graph layer index must be 1 or 2, got " + std::to_string(layer));
    }
    std::vector<Tensor> out;
    out.reserve(alphas.size());
    for (const Var& a : alphas) out.push_back(a.value());
    return out;
}

ShapeReport shape_contract(const ModelConfig& config, std::int64_t K, std::int64_t S) {
    config.validate();
    if (K < 1 || S < 1) throw std::invalid_argument("shape contract needs positive K and S");
    if (S != config.S) {
        throw std::invalid_argument("shape contract: S=" + std::to_string(S) +
                                    " does not match config S=" + std::to_string(config.S));
    }
    ShapeReport r;
    auto push = [&](const std::string& name, std::initializer_list<std::int64_t> dims) {
        r.stages.emplace_back(name, std::vector<std::int64_t>(dims));
    };
    std::int64_t L = config.L;
    push("graph input", {K, S, L + 1});
    std::int64_t h1 = static_cast<std::int64_t>(config.g1_heads) * config.g1_dim;
    push("graph layer 1 (heads concatenated)", {K, S, h1});
    push("graph layer 2 (heads averaged, gated)", {K, S, config.H_G});
    std::int64_t ht = config.H_G;
    if (config.semantic_enabled()) {
        push("semantic input", {K, S, static_cast<std::int64_t>(config.f_prime())});
        push("semantic module", {K, S, config.H_P});
        ht += config.H_P;
    }
    if (ht != config.H_T()) {
        throw std::logic_error("shape contract: module widths sum to " + std::to_string(ht) +
                               ", H_T is " + std::to_string(config.H_T()));
    }
    push("module concat", {K, S, ht});
    push("encoder", {K, S, ht});
    push("output hidden", {K, S, static_cast<std::int64_t>(config.output_hidden)});
    push("imputation", {K, S, L});
    return r;
}

} // namespace gttdi
