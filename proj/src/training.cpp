#include "gttdi/training.hpp"

#include "gttdi/evaluation.hpp"
#include "gttdi/ops.hpp"
#include "gttdi/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace gttdi {

Var masked_mse(Var prediction, Var truth, const std::vector<std::uint8_t>& observed) {
    if (!prediction.value().same_shape(truth.value())) {
        throw std::invalid_argument("loss inputs differ in shape: " + shape_str(prediction.shape()) +
                                    " vs " + shape_str(truth.shape()));
    }
    if (static_cast<std::int64_t>(observed.size()) != prediction.value().numel()) {
        throw std::invalid_argument("observation bits cover " + std::to_string(observed.size()) +
                                    " entries, prediction holds " +
                                    std::to_string(prediction.value().numel()));
    }
    Tape& tape = *prediction.tape();
    Tensor w(prediction.shape(), 0.0);
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < w.numel(); ++i) {
        if (!observed[static_cast<std::size_t>(i)]) {
            w.data[static_cast<std::size_t>(i)] = 1.0;
            ++n;
        }
    }
    if (n == 0) return tape.constant(Tensor::scalar(0.0));
    Var diff = sub(prediction, truth);
    return scale(sum_all(mul(tape.constant(std::move(w)), mul(diff, diff))), 1.0 / static_cast<double>(n));
}

Var kl_divergence_loss(Var prediction, Var truth, double eps) {
    if (!prediction.value().same_shape(truth.value())) {
        throw std::invalid_argument("loss inputs differ in shape: " + shape_str(prediction.shape()) +
                                    " vs " + shape_str(truth.shape()));
    }
    if (prediction.value().numel() == 0) throw std::invalid_argument("distribution loss on empty tensors");
    if (!(eps > 0.0)) throw std::invalid_argument("distribution loss needs a positive floor");
    Tape& tape = *prediction.tape();
    const int C = static_cast<int>(prediction.value().cols());
    const int R = static_cast<int>(prediction.value().numel() / C);

    auto as_rows = [&](Var x) {
        Var clamped = clamp_min(reshape(x, {R, C}), eps);
        Var recip = div(tape.constant(Tensor({R}, 1.0)), sum_last(clamped));
        return scale_rows(clamped, recip);
    };
    Var p_hat = as_rows(prediction);
    Var p_t = as_rows(truth);
    return mean_all(sum_last(mul(p_t, sub(log_op(p_t), log_op(p_hat)))));
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (epochs < 0) throw std::invalid_argument("epoch count must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (!(kl_weight >= 0.0)) throw std::invalid_argument("distribution loss weight must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
    if (patience < 1) throw std::invalid_argument("patience must be at least 1");
    if (!(val_rate > 0.0 && val_rate < 1.0)) {
        throw std::invalid_argument("validation missing rate must lie in (0, 1)");
    }
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("moment decay rates must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("denominator floor must be positive");
}

void Adam::step(GTTDIParams& params, const std::map<std::string, Tensor>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end()) {
            throw std::invalid_argument("gradient for unknown parameter '" + name + "'");
        }
        Tensor& p = it->second;
        if (!p.same_shape(g)) {
            throw std::invalid_argument("gradient shape " + shape_str(g.shape) + " does not match parameter '" +
                                        name + "' " + shape_str(p.shape));
        }
        Tensor& m = m_.try_emplace(name, Tensor(p.shape, 0.0)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor(p.shape, 0.0)).first->second;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g.data[static_cast<std::size_t>(i)];
            double& mi = m.data[static_cast<std::size_t>(i)];
            double& vi = v.data[static_cast<std::size_t>(i)];
            mi = beta1_ * mi + (1.0 - beta1_) * gi;
            vi = beta2_ * vi + (1.0 - beta2_) * gi * gi;
            p.data[static_cast<std::size_t>(i)] -= lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
        }
    }
}

namespace {

struct BatchLoss {
    Var total;
    Var output;
    double mse = 0.0;
    double kl = 0.0;
};

// Shared forward + objective for the optimizer and the gradient checker.
// `truth` carries data-unit values with zero at truth-missing entries;
// `loss_observed` is 1 wherever no reconstruction penalty applies.
BatchLoss batch_objective(const BoundParams& bp, const BatchInput& in, const GraphIndex& graph,
                          const Tensor& truth, const std::vector<std::uint8_t>& loss_observed,
                          double kl_weight, Rng& dropout_rng) {
    const NormStats& norm = bp.params().norm;
    Var out = forward_batch(bp, in, graph, /*train=*/true, dropout_rng);

    Tensor truth_norm(out.shape(), 0.0);
    for (std::int64_t i = 0; i < truth.numel(); ++i) {
        if (!loss_observed[static_cast<std::size_t>(i)]) {
            truth_norm.data[static_cast<std::size_t>(i)] = norm.normalize(truth.data[static_cast<std::size_t>(i)]);
        }
    }
    BatchLoss loss;
    loss.output = out;
    Var mse = masked_mse(out, bp.tape().constant(std::move(truth_norm)), loss_observed);
    loss.mse = mse.value().data[0];
    loss.total = mse;
    if (kl_weight > 0.0) {
        // The distribution loss scores the completed series, not the raw
        // reconstruction: observed entries pass through unchanged and the
        // network only fills the gaps, so the KL gradient reaches exactly
        // the cells imputation has to invent.
        Tensor gaps(out.shape(), 0.0);
        for (std::size_t i = 0; i < in.mask.size(); ++i) {
            if (!in.mask[i]) gaps.data[i] = 1.0;
        }
        Tensor y_obs = in.y;
        y_obs.shape = out.shape();
        Var completed = add(mul(out, bp.tape().constant(std::move(gaps))), bp.tape().constant(std::move(y_obs)));
        Var pred_units = add_scalar(scale(completed, norm.span()), norm.vmin);
        Tensor truth_units = truth;
        truth_units.shape = out.shape();
        Var kl = kl_divergence_loss(pred_units, bp.tape().constant(std::move(truth_units)));
        loss.kl = kl.value().data[0];
        loss.total = add(loss.total, scale(kl, kl_weight));
    }
    return loss;
}

void check_semantic_input(const ModelConfig& mc, const Tensor& p, int K, const char* which) {
    if (!mc.semantic_enabled()) return;
    if (p.ndim() != 3 || p.dim(0) != K || p.dim(1) != mc.S || p.dim(2) != mc.f_prime()) {
        throw std::invalid_argument(std::string(which) + " semantic tensor must be (" + std::to_string(K) +
                                    "," + std::to_string(mc.S) + "," + std::to_string(mc.f_prime()) +
                                    "), got " + shape_str(p.shape));
    }
}

void check_series(const ModelConfig& mc, const TrafficSeriesTensor& t, const char* which) {
    t.validate();
    if (t.S() != mc.S || t.L() != mc.L || t.M() != mc.M) {
        throw std::invalid_argument(std::string(which) + " tensor geometry (S=" + std::to_string(t.S()) +
                                    ",L=" + std::to_string(t.L()) + ",M=" + std::to_string(t.M()) +
                                    ") does not match the model (S=" + std::to_string(mc.S) +
                                    ",L=" + std::to_string(mc.L) + ",M=" + std::to_string(mc.M) + ")");
    }
    if (t.K() < 1) throw std::invalid_argument(std::string(which) + " tensor holds no samples");
}

} // namespace

TrainResult train(const GTTDIParams& initial, const TrafficSeriesTensor& train_truth,
                  const TrafficSeriesTensor& val_truth, const EdgeSet& edges, const Tensor& p_train,
                  const Tensor& p_val, const TrainConfig& config) {
    config.validate();
    const ModelConfig& mc = initial.config;
    mc.validate();
    check_series(mc, train_truth, "training");
    check_series(mc, val_truth, "validation");
    check_semantic_input(mc, p_train, train_truth.K(), "training");
    check_semantic_input(mc, p_val, val_truth.K(), "validation");
    if (!(initial.norm.span() > 0.0)) {
        throw std::invalid_argument("normalization statistics are degenerate; compute them on the training days first");
    }

    GTTDIParams params = initial;
    params.config.dropout_rate = config.dropout;
    GraphIndex graph = build_graph_index(edges, mc.S);

    TrainResult result;
    result.params = params;
    if (config.epochs == 0) return result;

    // The validation mask is drawn once and reused across epochs.
    CorruptionSpec val_spec;
    val_spec.pattern = config.pattern;
    val_spec.rate = config.val_rate;
    val_spec.seed = Rng::stream(config.seed, "val/" + pattern_name(config.pattern)).next_u64();
    TrafficSeriesTensor val_corr = apply_mask(val_truth, corrupt_mask(val_truth, val_spec));
    std::vector<std::uint8_t> val_sel = imputed_cells(val_truth, val_corr.mask);

    const int K = train_truth.K();
    const int S = mc.S, L = mc.L;
    Adam opt(config.learning_rate);
    double best_maape = std::numeric_limits<double>::infinity();
    int epochs_since_improve = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<int> order(static_cast<std::size_t>(K));
        for (int i = 0; i < K; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng shuffle_rng = Rng::stream(config.seed, "train/shuffle").fork(static_cast<std::uint64_t>(epoch));
        for (int i = K - 1; i > 0; --i) {
            const auto j = shuffle_rng.uniform_int(static_cast<std::uint64_t>(i) + 1);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        Rng rate_rng = Rng::stream(config.seed, "train/rate").fork(static_cast<std::uint64_t>(epoch));
        double epoch_mse = 0.0, epoch_kl = 0.0;
        int n_batches = 0;

        for (int start = 0; start < K; start += config.batch_size) {
            const int kb = std::min(config.batch_size, K - start);
            const int batch = start / config.batch_size;
            std::vector<int> samples(order.begin() + start, order.begin() + start + kb);

            // The batch as a day-slice tensor of its own (one slice per
            // day), so fiber-wise corruption drops whole sensor rows.
            TrafficSeriesTensor bt;
            bt.values = sample_rows(train_truth.values, samples);
            bt.mask.resize(static_cast<std::size_t>(kb) * S * L);
            for (int i = 0; i < kb; ++i) {
                for (int s = 0; s < S; ++s) {
                    for (int l = 0; l < L; ++l) {
                        bt.mask[static_cast<std::size_t>((static_cast<std::int64_t>(i) * S + s) * L + l)] =
                            train_truth.mask[static_cast<std::size_t>(train_truth.flat(samples[static_cast<std::size_t>(i)], s, l))];
                    }
                }
            }
            bt.interval_minutes = train_truth.interval_minutes;
            bt.slices_per_day = 1;
            bt.units = train_truth.units;
            bt.calendar = train_truth.calendar;

            const double rate = 0.1 * static_cast<double>(1 + rate_rng.uniform_int(9));
            CorruptionSpec spec;
            spec.pattern = config.pattern;
            spec.rate = rate;
            spec.seed = Rng::stream(config.seed, "train/corrupt")
                            .fork(static_cast<std::uint64_t>(epoch))
                            .fork(static_cast<std::uint64_t>(batch))
                            .next_u64();
            std::vector<std::uint8_t> corrupted = corrupt_mask(bt, spec);

            BatchInput in;
            in.y = Tensor({kb, S, L}, 0.0);
            in.mask = corrupted;
            for (std::int64_t i = 0; i < in.y.numel(); ++i) {
                if (corrupted[static_cast<std::size_t>(i)]) {
                    in.y.data[static_cast<std::size_t>(i)] =
                        params.norm.normalize(bt.values.data[static_cast<std::size_t>(i)]);
                }
            }
            if (mc.semantic_enabled()) in.p = sample_rows(p_train, samples);

            // Penalty applies exactly where the truth is known but the
            // corrupted input is not.
            std::vector<std::uint8_t> loss_observed(bt.mask.size());
            for (std::size_t i = 0; i < bt.mask.size(); ++i) {
                loss_observed[i] = (corrupted[i] || !bt.mask[i]) ? 1 : 0;
            }

            try {
                Tape tape;
                BoundParams bp(tape, params, /*requires_grad=*/true);
                Rng drop_rng = Rng::stream(config.seed, "train/dropout")
                                   .fork(static_cast<std::uint64_t>(epoch))
                                   .fork(static_cast<std::uint64_t>(batch));
                BatchLoss loss =
                    batch_objective(bp, in, graph, bt.values, loss_observed, config.kl_weight, drop_rng);
                tape.backward(loss.total);

                std::map<std::string, Tensor> grads;
                for (const auto& [name, tensor] : params.tensors) {
                    const Tape::Node& node = tape.node(bp[name].id());
                    grads[name] = node.has_grad ? node.grad : Tensor(tensor.shape, 0.0);
                }
                opt.step(params, grads);
                epoch_mse += loss.mse;
                epoch_kl += loss.kl;
                ++n_batches;
            } catch (const std::exception& e) {
                throw std::runtime_error("training failed at epoch " + std::to_string(epoch) + " batch " +
                                         std::to_string(batch) + ": " + e.what());
            }
        }

        Tensor completed = impute(params, graph, val_corr, p_val);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_mse = epoch_mse / n_batches;
        rec.train_kl = epoch_kl / n_batches;
        rec.val_maape = maape(val_truth.values, completed, val_sel);
        rec.val_rmse = rmse(val_truth.values, completed, val_sel);
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(rec);

        if (rec.val_maape < best_maape) {
            best_maape = rec.val_maape;
            result.params = params;
            result.best_epoch = epoch;
            epochs_since_improve = 0;
        } else {
            ++epochs_since_improve;
            if (epochs_since_improve >= config.patience) break;
        }
    }
    return result;
}

void save_train_log(const std::vector<EpochRecord>& log, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open training log for writing: " + path);
    for (const EpochRecord& r : log) {
        nlohmann::ordered_json j;
        j["epoch"] = r.epoch;
        j["train_mse"] = r.train_mse;
        j["train_kl"] = r.train_kl;
        j["val_maape"] = r.val_maape;
        j["val_rmse"] = r.val_rmse;
        j["wall_ms"] = r.wall_ms;
        os << j.dump() << "\n";
    }
    if (!os) throw std::runtime_error("failed writing training log: " + path);
}

Tensor impute(GTTDIParams& params, const GraphIndex& graph, const TrafficSeriesTensor& y_in,
              const Tensor& p) {
    Tensor completed = forward(params, graph, y_in, p);
    for (std::int64_t i = 0; i < completed.numel(); ++i) {
        if (y_in.mask[static_cast<std::size_t>(i)]) {
            completed.data[static_cast<std::size_t>(i)] = y_in.values.data[static_cast<std::size_t>(i)];
        }
    }
    return completed;
}

GradCheckSummary check_gradients(const ModelConfig& config, std::uint64_t seed, double step,
                                 double noise_floor) {
    config.validate();
    if (!(step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    const int S = config.S, L = config.L;
    const int kb = 2;

    EdgeSet edges;
    edges.n_sensors = S;
    for (int i = 0; i + 1 < S; ++i) {
        edges.pairs.emplace_back(i, i + 1);
        edges.features.push_back({1.0, 0.0, 1.0});
        edges.pairs.emplace_back(i + 1, i);
        edges.features.push_back({1.0, 0.0, 1.0});
    }
    GraphIndex graph = build_graph_index(edges, S);

    GTTDIParams params = init_params(config, seed);
    params.norm.vmin = 0.0;
    params.norm.vmax = 100.0;

    // Synthetic batch: partially observed inputs, dense data-unit truth,
    // plus a random linear probe so every output coordinate feeds the
    // objective even where the reconstruction penalty is silent.
    BatchInput in;
    in.y = Tensor({kb, S, L});
    in.mask.resize(static_cast<std::size_t>(kb) * S * L);
    Rng y_rng = Rng::stream(seed, "gradcheck/y");
    Rng mask_rng = Rng::stream(seed, "gradcheck/mask");
    for (std::int64_t i = 0; i < in.y.numel(); ++i) {
        const bool obs = mask_rng.bernoulli(0.7);
        in.mask[static_cast<std::size_t>(i)] = obs ? 1 : 0;
        in.y.data[static_cast<std::size_t>(i)] = obs ? y_rng.uniform() : 0.0;
    }
    if (config.semantic_enabled()) {
        in.p = Tensor({kb, S, config.f_prime()});
        Rng p_rng = Rng::stream(seed, "gradcheck/p");
        for (auto& v : in.p.data) v = p_rng.uniform(-1.0, 1.0);
    }
    Tensor truth({kb * S, L});
    Rng truth_rng = Rng::stream(seed, "gradcheck/truth");
    for (auto& v : truth.data) v = params.norm.denormalize(truth_rng.uniform());
    std::vector<std::uint8_t> loss_observed(in.mask.begin(), in.mask.end());
    Tensor probe({kb * S, L});
    Rng probe_rng = Rng::stream(seed, "gradcheck/probe");
    for (auto& v : probe.data) v = probe_rng.uniform(-1.0, 1.0);

    auto objective = [&](bool with_grad, std::map<std::string, Tensor>* grads) {
        Tape tape;
        BoundParams bp(tape, params, with_grad);
        Rng drop_rng = Rng::stream(seed, "gradcheck/dropout");
        BatchLoss loss = batch_objective(bp, in, graph, truth, loss_observed, 1.0, drop_rng);
        Var total = add(loss.total, sum_all(mul(tape.constant(probe), loss.output)));
        if (with_grad) {
            tape.backward(total);
            for (const auto& [name, tensor] : params.tensors) {
                const Tape::Node& node = tape.node(bp[name].id());
                (*grads)[name] = node.has_grad ? node.grad : Tensor(tensor.shape, 0.0);
            }
        }
        return total.value().data[0];
    };

    std::map<std::string, Tensor> analytic;
    objective(true, &analytic);

    GradCheckSummary summary;
    for (auto& [name, tensor] : params.tensors) {
        const Tensor& g = analytic.at(name);
        for (std::int64_t i = 0; i < tensor.numel(); ++i) {
            const double saved = tensor.data[static_cast<std::size_t>(i)];
            tensor.data[static_cast<std::size_t>(i)] = saved + step;
            const double up = objective(false, nullptr);
            tensor.data[static_cast<std::size_t>(i)] = saved - step;
            const double down = objective(false, nullptr);
            tensor.data[static_cast<std::size_t>(i)] = saved;

            const double numeric = (up - down) / (2.0 * step);
            const double ana = g.data[static_cast<std::size_t>(i)];
            ++summary.checked;
            if (std::abs(ana - numeric) < noise_floor) continue;
            const double rel = std::abs(ana - numeric) / std::max(std::abs(ana), std::abs(numeric));
            if (rel > summary.max_rel) {
                summary.max_rel = rel;
                summary.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return summary;
}

} // namespace gttdi
