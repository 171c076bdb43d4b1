#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crac/config.hpp"
#include "crac/datagen.hpp"
#include "crac/losses.hpp"
#include "crac/metrics.hpp"
#include "crac/model.hpp"
#include "crac/scheduler.hpp"

namespace crac {

// Adam with bias correction; moments persist in checkpoints so a resumed run
// reproduces the uninterrupted trajectory.
struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t step = 0;
    std::vector<Tensor> m, v;  // parallel to the parameter list

    static AdamState init(const ModelParams& params);
};

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& adam,
               double lr);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_total = 0.0, train_ce = 0.0;
    double train_penalty_inner = 0.0, train_penalty_outer = 0.0;
    double val_total = 0.0;
    bool has_alm = false;
    KrMatrix lambda, rho, mean_violation;
    double seconds = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> log;
    std::string final_checkpoint;
    std::string last_checkpoint;
    std::string log_path;
};

// Full training loop: epoch-seeded shuffles, Adam steps per batch, and for
// the crac loss the Eq.-style multiplier and rho updates from validation
// statistics at each epoch boundary (multipliers first, then rho). All
// persisted state snaps to the f32 checkpoint grid at epoch boundaries so
// checkpoint resume is bit-exact.
TrainResult train(const TrainConfig& config);

// Writes the deterministic per-epoch log (wall time goes into a separate
// timing.csv so two identical runs produce byte-identical logs).
void write_train_log(const std::vector<EpochRecord>& log, std::size_t num_classes,
                     const std::string& path);
void write_timing_csv(const std::vector<EpochRecord>& log, const std::string& path);

MetricsReport evaluate(const ModelParams& params, const std::vector<Sample>& samples,
                       std::size_t height, std::size_t width, const EvalOptions& opts = {},
                       std::size_t batch_size = 16);

// Batched forward pass without gradient bookkeeping.
Tensor predict_logits(const ModelParams& params, const std::vector<Sample>& samples,
                      const std::vector<std::size_t>& indices, std::size_t height,
                      std::size_t width);

}  // namespace crac
