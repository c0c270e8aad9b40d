#pragma once

#include "gttdi/corruption.hpp"
#include "gttdi/data_model.hpp"
#include "gttdi/gt_tdi_model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gttdi {

// Mean squared error over the entries whose observation bit is 0; exactly
// zero (and gradient-free) contributions from observed entries. Returns a
// constant 0 when nothing is missing.
Var masked_mse(Var prediction, Var truth, const std::vector<std::uint8_t>& observed);

// Rows are per-(sample, sensor) slice vectors. Both rows are clamped below
// at eps, normalized to probability vectors, and compared with
// KL(truth || prediction), averaged over rows.
Var kl_divergence_loss(Var prediction, Var truth, double eps = 1e-8);

struct TrainConfig {
    double learning_rate = 0.001;
    int epochs = 0;
    int batch_size = 8;
    double kl_weight = 1.0;
    double dropout = 0.1;
    std::uint64_t seed = 0;
    int patience = 20; // epochs without validation improvement
    MissingPattern pattern = MissingPattern::RandomMissing;
    double val_rate = 0.5; // fixed corruption rate for the validation mask

    void validate() const;
};

// Adam with bias correction; state is keyed by parameter name.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(GTTDIParams& params, const std::map<std::string, Tensor>& grads);
    std::int64_t steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

struct EpochRecord {
    int epoch = 0;
    double train_mse = 0.0;
    double train_kl = 0.0;
    double val_maape = 0.0;
    double val_rmse = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    GTTDIParams params; // snapshot with the lowest validation MAAPE
    std::vector<EpochRecord> log;
    int best_epoch = -1; // -1 when no epoch ran
};

// End-to-end optimization: per-batch corruption at a rate drawn from
// {0.1 .. 0.9}, masked MSE plus weighted distribution loss, Adam updates,
// early stopping on validation MAAPE. Deterministic given config.seed
// (wall_ms in the log is the only timing field anywhere).
TrainResult train(const GTTDIParams& initial, const TrafficSeriesTensor& train_truth,
                  const TrafficSeriesTensor& val_truth, const EdgeSet& edges,
                  const Tensor& p_train, const Tensor& p_val, const TrainConfig& config);

// One structured record per epoch, line-delimited.
void save_train_log(const std::vector<EpochRecord>& log, const std::string& path);

// Completed tensor in data units: observed entries are copied from y_in
// bit-exactly, missing entries carry the model reconstruction.
Tensor impute(GTTDIParams& params, const GraphIndex& graph, const TrafficSeriesTensor& y_in,
              const Tensor& p);

struct GradCheckSummary {
    double max_rel = 0.0;
    std::string worst;
    std::int64_t checked = 0;
    double seconds = 0.0;
};

// Central finite differences over every trainable tensor of a freshly
// initialized model on a synthetic batch, against one analytic backward
// pass of the full training objective. Coordinates whose analytic/numeric
// difference sits below noise_floor are counted but not scored (see the
// attention key-bias invariance).
GradCheckSummary check_gradients(const ModelConfig& config, std::uint64_t seed, double step = 1e-5,
                                 double noise_floor = 1e-7);

} // namespace gttdi
