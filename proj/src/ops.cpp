#include "gttdi/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gttdi {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    }
}

// True when `suffix` equals the trailing dims of `shape`.
bool is_suffix(const std::vector<int>& shape, const std::vector<int>& suffix) {
    if (suffix.size() > shape.size()) return false;
    return std::equal(suffix.rbegin(), suffix.rend(), shape.rbegin());
}

// C(m,n) += A(m,k) * B(k,n)
void mm_nn(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
            const double a = A[i * k + l];
            if (a == 0.0) continue;
            const double* brow = B + l * n;
            double* crow = C + i * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

// C(m,n) += A(m,k) * B(n,k)^T
void mm_nt(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = B + j * k;
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            C[i * n + j] += acc;
        }
    }
}

// C(k,n) += A(m,k)^T * B(m,n)
void mm_tn(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* brow = B + i * n;
        for (int l = 0; l < k; ++l) {
            const double a = A[i * k + l];
            if (a == 0.0) continue;
            double* crow = C + l * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

} // namespace

std::vector<std::string> primitive_names() {
    return {"add",          "sub",        "mul",        "div",       "scale",
            "add_scalar",   "matmul",     "transpose",  "exp",       "log",
            "sigmoid",      "leaky_relu", "clamp_min",  "sum_all",   "mean_all",
            "sum_last",     "mean_last",  "concat",     "reshape",   "slice_rows",
            "gather_rows",  "scatter_add_rows",         "scale_rows",
            "softmax",      "conv1d_same",              "batch_norm",
            "layer_norm",   "dropout"};
}

// ---- arithmetic ------------------------------------------------------

Var add(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!is_suffix(av.shape, bv.shape)) {
        throw std::invalid_argument("add: shape mismatch " + shape_str(av.shape) + " vs " +
                                    shape_str(bv.shape));
    }
    Tensor out = av;
    const int bn = static_cast<int>(bv.numel());
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i % bn];
    const int aid = a.id(), bid = b.id();
    return t.apply("add", std::move(out), {aid, bid}, [aid, bid, bn](Tape& tp, const Tape::Node& n) {
        if (tp.node(aid).requires_grad) tp.accumulate_grad(aid, n.grad);
        if (tp.node(bid).requires_grad) {
            Tensor gb(tp.node(bid).value.shape, 0.0);
            for (size_t i = 0; i < n.grad.data.size(); ++i) gb.data[i % bn] += n.grad.data[i];
            tp.accumulate_grad(bid, gb);
        }
    });
}

Var sub(Var a, Var b) {
    Tape& t = *a.tape();
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
    const int aid = a.id(), bid = b.id();
    return t.apply("sub", std::move(out), {aid, bid}, [aid, bid](Tape& tp, const Tape::Node& n) {
        if (tp.node(aid).requires_grad) tp.accumulate_grad(aid, n.grad);
        if (tp.node(bid).requires_grad) {
            Tensor gb = n.grad;
            for (double& v : gb.data) v = -v;
            tp.accumulate_grad(bid, gb);
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!is_suffix(av.shape, bv.shape)) {
        throw std::invalid_argument("mul: shape mismatch " + shape_str(av.shape) + " vs " +
                                    shape_str(bv.shape));
    }
    Tensor out = av;
    const int bn = static_cast<int>(bv.numel());
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i % bn];
    const int aid = a.id(), bid = b.id();
    Tensor asave = av, bsave = bv;
    return t.apply("mul", std::move(out), {aid, bid},
                   [aid, bid, bn, asave, bsave](Tape& tp, const Tape::Node& n) {
                       if (tp.node(aid).requires_grad) {
                           Tensor ga = n.grad;
                           for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= bsave.data[i % bn];
                           tp.accumulate_grad(aid, ga);
                       }
                       if (tp.node(bid).requires_grad) {
                           Tensor gb(bsave.shape, 0.0);
                           for (size_t i = 0; i < n.grad.data.size(); ++i)
                               gb.data[i % bn] += n.grad.data[i] * asave.data[i];
                           tp.accumulate_grad(bid, gb);
                       }
                   });
}

Var div(Var a, Var b) {
    Tape& t = *a.tape();
    require_same_shape("div", a.value(), b.value());
    Tensor out = a.value();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= b.value().data[i];
    const int aid = a.id(), bid = b.id();
    Tensor bsave = b.value(), ysave = out;
    return t.apply("div", std::move(out), {aid, bid},
                   [aid, bid, bsave, ysave](Tape& tp, const Tape::Node& n) {
                       if (tp.node(aid).requires_grad) {
                           Tensor ga = n.grad;
                           for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] /= bsave.data[i];
                           tp.accumulate_grad(aid, ga);
                       }
                       if (tp.node(bid).requires_grad) {
                           Tensor gb = n.grad;
                           for (size_t i = 0; i < gb.data.size(); ++i)
                               gb.data[i] *= -ysave.data[i] / bsave.data[i];
                           tp.accumulate_grad(bid, gb);
                       }
                   });
}

Var scale(Var a, double c) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v *= c;
    const int aid = a.id();
    return t.apply("scale", std::move(out), {aid}, [aid, c](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        Tensor ga = n.grad;
        for (double& v : ga.data) v *= c;
        tp.accumulate_grad(aid, ga);
    });
}

Var add_scalar(Var a, double c) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v += c;
    const int aid = a.id();
    return t.apply("add_scalar", std::move(out), {aid}, [aid](Tape& tp, const Tape::Node& n) {
        if (tp.node(aid).requires_grad) tp.accumulate_grad(aid, n.grad);
    });
}

Var matmul(Var a, Var b) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0]) {
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(av.shape) + " vs " +
                                    shape_str(bv.shape));
    }
    const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
    Tensor out({m, n}, 0.0);
    mm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
    const int aid = a.id(), bid = b.id();
    Tensor asave = av, bsave = bv;
    return t.apply("matmul", std::move(out), {aid, bid},
                   [aid, bid, m, k, n, asave, bsave](Tape& tp, const Tape::Node& nd) {
                       if (tp.node(aid).requires_grad) {
                           Tensor ga({m, k}, 0.0);
                           mm_nt(nd.grad.data.data(), bsave.data.data(), ga.data.data(), m, n, k);
                           tp.accumulate_grad(aid, ga);
                       }
                       if (tp.node(bid).requires_grad) {
                           Tensor gb({k, n}, 0.0);
                           mm_tn(asave.data.data(), nd.grad.data.data(), gb.data.data(), m, k, n);
                           tp.accumulate_grad(bid, gb);
                       }
                   });
}

Var transpose(Var a) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    if (av.ndim() != 2) {
        throw std::invalid_argument("transpose: expected a 2-D tensor, got " + shape_str(av.shape));
    }
    const int r = av.shape[0], c = av.shape[1];
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data[j * r + i] = av.data[i * c + j];
    const int aid = a.id();
    return t.apply("transpose", std::move(out), {aid}, [aid, r, c](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        Tensor ga({r, c});
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < r; ++j) ga.data[j * c + i] = n.grad.data[i * r + j];
        tp.accumulate_grad(aid, ga);
    });
}

// ---- pointwise nonlinearities ---------------------------------------

Var exp_op(Var a) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v = std::exp(v);
    const int aid = a.id();
    Tensor ysave = out;
    return t.apply("exp", std::move(out), {aid}, [aid, ysave](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        Tensor ga = n.grad;
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= ysave.data[i];
        tp.accumulate_grad(aid, ga);
    });
}

Var log_op(Var a) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v = std::log(v);
    const int aid = a.id();
    Tensor xsave = a.value();
    return t.apply("log", std::move(out), {aid}, [aid, xsave](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        Tensor ga = n.grad;
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] /= xsave.data[i];
        tp.accumulate_grad(aid, ga);
    });
}

Var sigmoid(Var a) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    const int aid = a.id();
    Tensor ysave = out;
    return t.apply("sigmoid", std::move(out), {aid}, [aid, ysave](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        Tensor ga = n.grad;
        for (size_t i = 0; i < ga.data.size(); ++i) {
            const double y = ysave.data[i];
            ga.data[i] *= y * (1.0 - y);
        }
        tp.accumulate_grad(aid, ga);
    });
}

Var leaky_relu(Var a, double negative_slope) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data)
        if (v < 0.0) v *= negative_slope;
    const int aid = a.id();
    Tensor xsave = a.value();
    return t.apply("leaky_relu", std::move(out), {aid},
                   [aid, negative_slope, xsave](Tape& tp, const Tape::Node& n) {
                       if (!tp.node(aid).requires_grad) return;
                       Tensor ga = n.grad;
                       for (size_t i = 0; i < ga.data.size(); ++i)
                           if (xsave.data[i] < 0.0) ga.data[i] *= negative_slope;
                       tp.accumulate_grad(aid, ga);
                   });
}

Var clamp_min(Var a, double lo) {
    Tape& t = *a.tape();
    Tensor out = a.value();
    for (double& v : out.data) v = std::max(v, lo);
    const int aid = a.id();
    Tensor xsave = a.value();
    return t.apply("clamp_min", std::move(out), {aid},
                   [aid, lo, xsave](Tape& tp, const Tape::Node& n) {
                       if (!tp.node(aid).requires_grad) return;
                       Tensor ga = n.grad;
                       for (size_t i = 0; i < ga.data.size(); ++i)
                           if (xsave.data[i] <= lo) ga.data[i] = 0.0;
                       tp.accumulate_grad(aid, ga);
                   });
}

// ---- reductions and shape ops ---------------------------------------

Var sum_all(Var a) {
    Tape& t = *a.tape();
    double s = 0.0;
    for (double v : a.value().data) s += v;
    const int aid = a.id();
    return t.apply("sum_all", Tensor::scalar(s), {aid}, [aid](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        tp.accumulate_grad(aid, Tensor(tp.node(aid).value.shape, n.grad.data[0]));
    });
}

Var mean_all(Var a) {
    Tape& t = *a.tape();
    const double inv = 1.0 / static_cast<double>(a.value().numel());
    double s = 0.0;
    for (double v : a.value().data) s += v;
    const int aid = a.id();
    return t.apply("mean_all", Tensor::scalar(s * inv), {aid},
                   [aid, inv](Tape& tp, const Tape::Node& n) {
                       if (!tp.node(aid).requires_grad) return;
                       tp.accumulate_grad(aid, Tensor(tp.node(aid).value.shape, n.grad.data[0] * inv));
                   });
}

namespace {

Var reduce_last(Var a, bool mean, const char* name) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const int f = av.shape.back();
    std::vector<int> oshape(av.shape.begin(), av.shape.end() - 1);
    if (oshape.empty()) oshape = {1};
    const double w = mean ? 1.0 / f : 1.0;
    Tensor out(oshape, 0.0);
    for (size_t r = 0; r < out.data.size(); ++r) {
        double s = 0.0;
        for (int j = 0; j < f; ++j) s += av.data[r * f + j];
        out.data[r] = s * w;
    }
    const int aid = a.id();
    return t.apply(name, std::move(out), {aid}, [aid, f, w](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        Tensor ga(tp.node(aid).value.shape, 0.0);
        for (size_t r = 0; r < n.grad.data.size(); ++r) {
            const double g = n.grad.data[r] * w;
            for (int j = 0; j < f; ++j) ga.data[r * f + j] = g;
        }
        tp.accumulate_grad(aid, ga);
    });
}

} // namespace

Var sum_last(Var a) { return reduce_last(a, false, "sum_last"); }
Var mean_last(Var a) { return reduce_last(a, true, "mean_last"); }

Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Tape& t = *parts[0].tape();
    const int nd = parts[0].value().ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw std::invalid_argument("concat: axis out of range");

    std::vector<int> oshape = parts[0].value().shape;
    oshape[axis] = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        if (v.ndim() != nd) {
            throw std::invalid_argument("concat: rank mismatch " + shape_str(oshape) + " vs " +
                                        shape_str(v.shape));
        }
        for (int d = 0; d < nd; ++d) {
            if (d != axis && v.shape[d] != parts[0].value().shape[d]) {
                throw std::invalid_argument("concat: shape mismatch " +
                                            shape_str(parts[0].value().shape) + " vs " +
                                            shape_str(v.shape));
            }
        }
        oshape[axis] += v.shape[axis];
    }

    long long outer = 1;
    for (int d = 0; d < axis; ++d) outer *= oshape[d];
    long long tail = 1;
    for (int d = axis + 1; d < nd; ++d) tail *= oshape[d];

    // Bytes each input contributes per outer index.
    std::vector<long long> chunk;
    std::vector<int> ids;
    chunk.reserve(parts.size());
    for (const Var& p : parts) {
        chunk.push_back(static_cast<long long>(p.value().shape[axis]) * tail);
        ids.push_back(p.id());
    }
    const long long ochunk = static_cast<long long>(oshape[axis]) * tail;

    Tensor out(oshape);
    for (long long o = 0; o < outer; ++o) {
        long long off = o * ochunk;
        for (size_t p = 0; p < parts.size(); ++p) {
            const Tensor& v = parts[p].value();
            std::copy_n(v.data.data() + o * chunk[p], chunk[p], out.data.data() + off);
            off += chunk[p];
        }
    }

    return t.apply("concat", std::move(out), ids,
                   [ids, chunk, outer, ochunk](Tape& tp, const Tape::Node& n) {
                       for (size_t p = 0; p < ids.size(); ++p) {
                           if (!tp.node(ids[p]).requires_grad) continue;
                           Tensor gp(tp.node(ids[p]).value.shape);
                           long long skip = 0;
                           for (size_t q = 0; q < p; ++q) skip += chunk[q];
                           for (long long o = 0; o < outer; ++o) {
                               std::copy_n(n.grad.data.data() + o * ochunk + skip, chunk[p],
                                           gp.data.data() + o * chunk[p]);
                           }
                           tp.accumulate_grad(ids[p], gp);
                       }
                   });
}

Var reshape(Var a, std::vector<int> new_shape) {
    Tape& t = *a.tape();
    if (shape_numel(new_shape) != a.value().numel()) {
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.value().shape) +
                                    " vs " + shape_str(new_shape));
    }
    Tensor out(new_shape, a.value().data);
    const int aid = a.id();
    return t.apply("reshape", std::move(out), {aid}, [aid](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        tp.accumulate_grad(aid, Tensor(tp.node(aid).value.shape, n.grad.data));
    });
}

Var slice_rows(Var a, int start, int len) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const int rows = av.shape[0];
    if (start < 0 || len <= 0 || start + len > rows) {
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") out of bounds for " +
                                    shape_str(av.shape));
    }
    const long long rowsz = av.numel() / rows;
    std::vector<int> oshape = av.shape;
    oshape[0] = len;
    Tensor out(oshape, std::vector<double>(av.data.begin() + start * rowsz,
                                           av.data.begin() + (start + len) * rowsz));
    const int aid = a.id();
    return t.apply("slice_rows", std::move(out), {aid},
                   [aid, start, rowsz](Tape& tp, const Tape::Node& n) {
                       if (!tp.node(aid).requires_grad) return;
                       Tensor ga(tp.node(aid).value.shape, 0.0);
                       std::copy(n.grad.data.begin(), n.grad.data.end(),
                                 ga.data.begin() + start * rowsz);
                       tp.accumulate_grad(aid, ga);
                   });
}

// ---- indexed row ops --------------------------------------------------

Var gather_rows(Var a, const std::vector<int>& idx) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    if (av.ndim() != 2) {
        throw std::invalid_argument("gather_rows: expected a 2-D tensor, got " + shape_str(av.shape));
    }
    const int rows = av.shape[0], c = av.shape[1];
    Tensor out({static_cast<int>(idx.size()), c});
    for (size_t w = 0; w < idx.size(); ++w) {
        if (idx[w] < 0 || idx[w] >= rows)
            throw std::out_of_range("gather_rows: index " + std::to_string(idx[w]) +
                                    " out of range for " + shape_str(av.shape));
        std::copy_n(av.data.data() + idx[w] * c, c, out.data.data() + w * c);
    }
    const int aid = a.id();
    return t.apply("gather_rows", std::move(out), {aid}, [aid, idx, c](Tape& tp, const Tape::Node& n) {
        if (!tp.node(aid).requires_grad) return;
        Tensor ga(tp.node(aid).value.shape, 0.0);
        for (size_t w = 0; w < idx.size(); ++w) {
            const double* g = n.grad.data.data() + w * c;
            double* dst = ga.data.data() + idx[w] * c;
            for (int j = 0; j < c; ++j) dst[j] += g[j];
        }
        tp.accumulate_grad(aid, ga);
    });
}

Var scatter_add_rows(Var a, const std::vector<int>& idx, int n_rows) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    if (av.ndim() != 2 || static_cast<size_t>(av.shape[0]) != idx.size()) {
        throw std::invalid_argument("scatter_add_rows: expected (" + std::to_string(idx.size()) +
                                    ", C), got " + shape_str(av.shape));
    }
    const int c = av.shape[1];
    Tensor out({n_rows, c}, 0.0);
    for (size_t w = 0; w < idx.size(); ++w) {
        if (idx[w] < 0 || idx[w] >= n_rows)
            throw std::out_of_range("scatter_add_rows: index " + std::to_string(idx[w]) +
                                    " out of range for " + std::to_string(n_rows) + " rows");
        const double* src = av.data.data() + w * c;
        double* dst = out.data.data() + idx[w] * c;
        for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
    const int aid = a.id();
    return t.apply("scatter_add_rows", std::move(out), {aid},
                   [aid, idx, c](Tape& tp, const Tape::Node& n) {
                       if (!tp.node(aid).requires_grad) return;
                       Tensor ga(tp.node(aid).value.shape);
                       for (size_t w = 0; w < idx.size(); ++w)
                           std::copy_n(n.grad.data.data() + idx[w] * c, c, ga.data.data() + w * c);
                       tp.accumulate_grad(aid, ga);
                   });
}

Var scale_rows(Var a, Var v) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const Tensor& vv = v.value();
    if (av.ndim() != 2 || static_cast<long long>(av.shape[0]) != vv.numel()) {
        throw std::invalid_argument("scale_rows: shape mismatch " + shape_str(av.shape) + " vs " +
                                    shape_str(vv.shape));
    }
    const int r = av.shape[0], c = av.shape[1];
    Tensor out = av;
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data[i * c + j] *= vv.data[i];
    const int aid = a.id(), vid = v.id();
    Tensor asave = av, vsave = vv;
    return t.apply("scale_rows", std::move(out), {aid, vid},
                   [aid, vid, r, c, asave, vsave](Tape& tp, const Tape::Node& n) {
                       if (tp.node(aid).requires_grad) {
                           Tensor ga = n.grad;
                           for (int i = 0; i < r; ++i)
                               for (int j = 0; j < c; ++j) ga.data[i * c + j] *= vsave.data[i];
                           tp.accumulate_grad(aid, ga);
                       }
                       if (tp.node(vid).requires_grad) {
                           Tensor gv(tp.node(vid).value.shape, 0.0);
                           for (int i = 0; i < r; ++i) {
                               double s = 0.0;
                               for (int j = 0; j < c; ++j)
                                   s += n.grad.data[i * c + j] * asave.data[i * c + j];
                               gv.data[i] = s;
                           }
                           tp.accumulate_grad(vid, gv);
                       }
                   });
}

// ---- softmax ----------------------------------------------------------

Var softmax(Var a) {
    Tape& t = *a.tape();
    const Tensor& av = a.value();
    const int f = av.shape.back();
    const long long rows = av.numel() / f;
    Tensor out = av;
    for (long long r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * f;
        double mx = row[0];
        for (int j = 1; j < f; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < f; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (int j = 0; j < f; ++j) row[j] /= z;
    }
    const int aid = a.id();
    Tensor ysave = out;
    return t.apply("softmax", std::move(out), {aid},
                   [aid, f, rows, ysave](Tape& tp, const Tape::Node& n) {
                       if (!tp.node(aid).requires_grad) return;
                       Tensor ga(tp.node(aid).value.shape);
                       for (long long r = 0; r < rows; ++r) {
                           const double* g = n.grad.data.data() + r * f;
                           const double* p = ysave.data.data() + r * f;
                           double dot = 0.0;
                           for (int j = 0; j < f; ++j) dot += g[j] * p[j];
                           double* o = ga.data.data() + r * f;
                           for (int j = 0; j < f; ++j) o[j] = p[j] * (g[j] - dot);
                       }
                       tp.accumulate_grad(aid, ga);
                   });
}

// ---- structured layers --------------------------------------------------

Var conv1d_same(Var x, Var w, Var b) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.ndim() != 3 || wv.ndim() != 3 || xv.shape[1] != wv.shape[1]) {
        throw std::invalid_argument("conv1d_same: shape mismatch " + shape_str(xv.shape) + " vs " +
                                    shape_str(wv.shape));
    }
    const int N = xv.shape[0], cin = xv.shape[1], L = xv.shape[2];
    const int cout = wv.shape[0], ks = wv.shape[2];
    if (ks % 2 == 0) throw std::invalid_argument("conv1d_same: kernel size must be odd");
    if (bv.numel() != cout) {
        throw std::invalid_argument("conv1d_same: bias shape mismatch " + shape_str(bv.shape) +
                                    " vs " + shape_str(wv.shape));
    }
    const int pad = ks / 2;

    Tensor out({N, cout, L});
    for (int s = 0; s < N; ++s) {
        for (int co = 0; co < cout; ++co) {
            double* orow = out.data.data() + (s * cout + co) * L;
            for (int p = 0; p < L; ++p) orow[p] = bv.data[co];
            for (int ci = 0; ci < cin; ++ci) {
                const double* xrow = xv.data.data() + (s * cin + ci) * L;
                const double* krow = wv.data.data() + (co * cin + ci) * ks;
                for (int j = 0; j < ks; ++j) {
                    const double kv = krow[j];
                    const int lo = std::max(0, pad - j);
                    const int hi = std::min(L, L + pad - j);
                    for (int p = lo; p < hi; ++p) orow[p] += kv * xrow[p + j - pad];
                }
            }
        }
    }

    const int xid = x.id(), wid = w.id(), bid = b.id();
    Tensor xsave = xv, wsave = wv;
    return t.apply(
        "conv1d_same", std::move(out), {xid, wid, bid},
        [xid, wid, bid, N, cin, cout, L, ks, pad, xsave, wsave](Tape& tp, const Tape::Node& n) {
            const double* g = n.grad.data.data();
            if (tp.node(xid).requires_grad) {
                Tensor gx({N, cin, L}, 0.0);
                for (int s = 0; s < N; ++s)
                    for (int co = 0; co < cout; ++co) {
                        const double* grow = g + (s * cout + co) * L;
                        for (int ci = 0; ci < cin; ++ci) {
                            double* xg = gx.data.data() + (s * cin + ci) * L;
                            const double* krow = wsave.data.data() + (co * cin + ci) * ks;
                            for (int j = 0; j < ks; ++j) {
                                const double kv = krow[j];
                                const int lo = std::max(0, pad - j);
                                const int hi = std::min(L, L + pad - j);
                                for (int p = lo; p < hi; ++p) xg[p + j - pad] += kv * grow[p];
                            }
                        }
                    }
                tp.accumulate_grad(xid, gx);
            }
            if (tp.node(wid).requires_grad) {
                Tensor gw({cout, cin, ks}, 0.0);
                for (int s = 0; s < N; ++s)
                    for (int co = 0; co < cout; ++co) {
                        const double* grow = g + (s * cout + co) * L;
                        for (int ci = 0; ci < cin; ++ci) {
                            const double* xrow = xsave.data.data() + (s * cin + ci) * L;
                            double* kg = gw.data.data() + (co * cin + ci) * ks;
                            for (int j = 0; j < ks; ++j) {
                                const int lo = std::max(0, pad - j);
                                const int hi = std::min(L, L + pad - j);
                                double acc = 0.0;
                                for (int p = lo; p < hi; ++p) acc += grow[p] * xrow[p + j - pad];
                                kg[j] += acc;
                            }
                        }
                    }
                tp.accumulate_grad(wid, gw);
            }
            if (tp.node(bid).requires_grad) {
                Tensor gb(tp.node(bid).value.shape, 0.0);
                for (int s = 0; s < N; ++s)
                    for (int co = 0; co < cout; ++co) {
                        const double* grow = g + (s * cout + co) * L;
                        double acc = 0.0;
                        for (int p = 0; p < L; ++p) acc += grow[p];
                        gb.data[co] += acc;
                    }
                tp.accumulate_grad(bid, gb);
            }
        });
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               bool train, double momentum, double eps) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    if (xv.ndim() != 2) {
        throw std::invalid_argument("batch_norm: expected a 2-D tensor, got " + shape_str(xv.shape));
    }
    const int r = xv.shape[0], f = xv.shape[1];
    if (gamma.value().numel() != f || beta.value().numel() != f ||
        running_mean.numel() != f || running_var.numel() != f) {
        throw std::invalid_argument("batch_norm: parameter width mismatch for input " +
                                    shape_str(xv.shape));
    }

    std::vector<double> mu(f), var(f), inv_sd(f);
    if (train) {
        for (int j = 0; j < f; ++j) {
            double s = 0.0;
            for (int i = 0; i < r; ++i) s += xv.data[i * f + j];
            mu[j] = s / r;
        }
        for (int j = 0; j < f; ++j) {
            double s = 0.0;
            for (int i = 0; i < r; ++i) {
                const double d = xv.data[i * f + j] - mu[j];
                s += d * d;
            }
            var[j] = s / r;
        }
        for (int j = 0; j < f; ++j) {
            running_mean.data[j] = (1.0 - momentum) * running_mean.data[j] + momentum * mu[j];
            running_var.data[j] = (1.0 - momentum) * running_var.data[j] + momentum * var[j];
        }
    } else {
        for (int j = 0; j < f; ++j) {
            mu[j] = running_mean.data[j];
            var[j] = running_var.data[j];
        }
    }
    for (int j = 0; j < f; ++j) inv_sd[j] = 1.0 / std::sqrt(var[j] + eps);

    Tensor xhat({r, f});
    Tensor out({r, f});
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < f; ++j) {
            const double h = (xv.data[i * f + j] - mu[j]) * inv_sd[j];
            xhat.data[i * f + j] = h;
            out.data[i * f + j] = gv.data[j] * h + bv.data[j];
        }

    const int xid = x.id(), gid = gamma.id(), bid = beta.id();
    Tensor gsave = gv;
    return t.apply(
        "batch_norm", std::move(out), {xid, gid, bid},
        [xid, gid, bid, r, f, train, xhat, inv_sd, gsave](Tape& tp, const Tape::Node& n) {
            const double* g = n.grad.data.data();
            if (tp.node(gid).requires_grad) {
                Tensor gg(tp.node(gid).value.shape, 0.0);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < f; ++j) gg.data[j] += g[i * f + j] * xhat.data[i * f + j];
                tp.accumulate_grad(gid, gg);
            }
            if (tp.node(bid).requires_grad) {
                Tensor gb(tp.node(bid).value.shape, 0.0);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < f; ++j) gb.data[j] += g[i * f + j];
                tp.accumulate_grad(bid, gb);
            }
            if (!tp.node(xid).requires_grad) return;
            Tensor gx({r, f});
            if (train) {
                // Batch statistics depend on x, so backprop through them.
                std::vector<double> mean_dh(f, 0.0), mean_dh_h(f, 0.0);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < f; ++j) {
                        const double dh = g[i * f + j] * gsave.data[j];
                        mean_dh[j] += dh;
                        mean_dh_h[j] += dh * xhat.data[i * f + j];
                    }
                for (int j = 0; j < f; ++j) {
                    mean_dh[j] /= r;
                    mean_dh_h[j] /= r;
                }
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < f; ++j) {
                        const double dh = g[i * f + j] * gsave.data[j];
                        gx.data[i * f + j] =
                            inv_sd[j] * (dh - mean_dh[j] - xhat.data[i * f + j] * mean_dh_h[j]);
                    }
            } else {
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < f; ++j)
                        gx.data[i * f + j] = g[i * f + j] * gsave.data[j] * inv_sd[j];
            }
            tp.accumulate_grad(xid, gx);
        });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    Tape& t = *x.tape();
    const Tensor& xv = x.value();
    const int f = xv.shape.back();
    const long long rows = xv.numel() / f;
    if (gamma.value().numel() != f || beta.value().numel() != f) {
        throw std::invalid_argument("layer_norm: parameter width mismatch for input " +
                                    shape_str(xv.shape));
    }

    Tensor xhat(xv.shape);
    Tensor out(xv.shape);
    std::vector<double> inv_sd(rows);
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    for (long long i = 0; i < rows; ++i) {
        const double* row = xv.data.data() + i * f;
        double mu = 0.0;
        for (int j = 0; j < f; ++j) mu += row[j];
        mu /= f;
        double var = 0.0;
        for (int j = 0; j < f; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= f;
        inv_sd[i] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < f; ++j) {
            const double h = (row[j] - mu) * inv_sd[i];
            xhat.data[i * f + j] = h;
            out.data[i * f + j] = gv.data[j] * h + bv.data[j];
        }
    }

    const int xid = x.id(), gid = gamma.id(), bid = beta.id();
    Tensor gsave = gv;
    return t.apply(
        "layer_norm", std::move(out), {xid, gid, bid},
        [xid, gid, bid, rows, f, xhat, inv_sd, gsave](Tape& tp, const Tape::Node& n) {
            const double* g = n.grad.data.data();
            if (tp.node(gid).requires_grad) {
                Tensor gg(tp.node(gid).value.shape, 0.0);
                for (long long i = 0; i < rows; ++i)
                    for (int j = 0; j < f; ++j) gg.data[j] += g[i * f + j] * xhat.data[i * f + j];
                tp.accumulate_grad(gid, gg);
            }
            if (tp.node(bid).requires_grad) {
                Tensor gb(tp.node(bid).value.shape, 0.0);
                for (long long i = 0; i < rows; ++i)
                    for (int j = 0; j < f; ++j) gb.data[j] += g[i * f + j];
                tp.accumulate_grad(bid, gb);
            }
            if (!tp.node(xid).requires_grad) return;
            Tensor gx(tp.node(xid).value.shape);
            for (long long i = 0; i < rows; ++i) {
                double mean_dh = 0.0, mean_dh_h = 0.0;
                for (int j = 0; j < f; ++j) {
                    const double dh = g[i * f + j] * gsave.data[j];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat.data[i * f + j];
                }
                mean_dh /= f;
                mean_dh_h /= f;
                for (int j = 0; j < f; ++j) {
                    const double dh = g[i * f + j] * gsave.data[j];
                    gx.data[i * f + j] =
                        inv_sd[i] * (dh - mean_dh - xhat.data[i * f + j] * mean_dh_h);
                }
            }
            tp.accumulate_grad(xid, gx);
        });
}

Var dropout(Var x, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    Tape& t = *x.tape();
    if (!train || p == 0.0) {
        // Identity node so eval-mode graphs have the same structure.
        const int xid = x.id();
        return t.apply("dropout", Tensor(x.value()), {xid}, [xid](Tape& tp, const Tape::Node& n) {
            if (tp.node(xid).requires_grad) tp.accumulate_grad(xid, n.grad);
        });
    }
    const double keep = 1.0 - p;
    const double inv_keep = 1.0 / keep;
    Tensor out = x.value();
    std::vector<char> mask(out.data.size());
    for (size_t i = 0; i < out.data.size(); ++i) {
        mask[i] = rng.bernoulli(keep) ? 1 : 0;
        out.data[i] = mask[i] ? out.data[i] * inv_keep : 0.0;
    }
    const int xid = x.id();
    return t.apply("dropout", std::move(out), {xid},
                   [xid, mask, inv_keep](Tape& tp, const Tape::Node& n) {
                       if (!tp.node(xid).requires_grad) return;
                       Tensor gx = n.grad;
                       for (size_t i = 0; i < gx.data.size(); ++i)
                           gx.data[i] = mask[i] ? gx.data[i] * inv_keep : 0.0;
                       tp.accumulate_grad(xid, gx);
                   });
}

} // namespace gttdi
