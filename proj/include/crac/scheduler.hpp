#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "crac/penalty.hpp"

namespace crac {

// K x 2 matrix with one cell per (class, region); region 0 = inner, 1 = outer.
struct KrMatrix {
    std::size_t num_classes = 0;
    std::vector<double> v;

    static KrMatrix constant(std::size_t num_classes, double value) {
        KrMatrix m;
        m.num_classes = num_classes;
        m.v.assign(num_classes * 2, value);
        return m;
    }
    double& at(std::size_t k, std::size_t r) { return v[k * 2 + r]; }
    double at(std::size_t k, std::size_t r) const { return v[k * 2 + r]; }
};

struct SchedulerConfig {
    double lambda_init = 0.1;  // NACL's published lambda anchors the start
    double rho_init = 1.0;
    double gamma = 1.2;  // rho growth factor, > 1
    double mu = 0.9;     // sufficient-decrease factor in (0, 1]
    double lambda_min = 1e-6;
    double lambda_max = 1e6;

    void validate() const;
};

// Outer-iteration state of the augmented Lagrangian schedule.
struct SchedulerState {
    SchedulerConfig config;
    KrMatrix lambda;
    KrMatrix rho;
    KrMatrix prev_violation;
    bool has_prev = false;
    std::size_t epoch = 0;

    static SchedulerState init(std::size_t num_classes, const SchedulerConfig& cfg = {});
    void validate() const;
    // Snap state to the f32 grid used by checkpoints, then re-apply bounds,
    // so an in-memory trajectory and a save/load round trip stay identical.
    void quantize_to_storage();
};

// Per-batch constraint statistics evaluated on validation data: means of
// P'(z, rho, lambda), |z| and signed z per (class, region) cell, plus the
// per-region pixel counts used as merge weights.
struct ValidationBatchStats {
    std::size_t num_classes = 0;
    std::vector<double> mean_pprime;         // K*2
    std::vector<double> mean_abs_violation;  // K*2
    std::vector<double> mean_violation;      // K*2, signed
    std::size_t pixel_count[2] = {0, 0};
};

struct AccumulatedStats {
    std::size_t num_classes = 0;
    KrMatrix mean_pprime;
    KrMatrix mean_abs_violation;
    KrMatrix mean_violation;
    std::size_t pixel_count[2] = {0, 0};

    bool has_pixels(std::size_t r) const { return pixel_count[r] > 0; }
};

// Order-insensitive, pixel-count-weighted merge of batch statistics over the
// validation split.
class ValidationAccumulator {
public:
    explicit ValidationAccumulator(std::size_t num_classes);
    void add(const ValidationBatchStats& batch);
    AccumulatedStats finalize() const;

private:
    std::size_t num_classes_;
    std::vector<double> sum_pprime_, sum_abs_, sum_signed_;  // K*2 weighted sums
    std::size_t count_[2] = {0, 0};
};

// lambda_{k,r} <- clamp(mean P', lambda_min, lambda_max); cells with no
// validation pixels carry the previous value. Increments the epoch index.
void update_multipliers(SchedulerState& state, const AccumulatedStats& acc);

// rho_{k,r} <- gamma * rho_{k,r} when the mean violation failed the
// mu-sufficient-decrease test against the previous epoch; first call only
// records the baseline.
void update_rho(SchedulerState& state, const AccumulatedStats& acc);

// ---------------------------------------------------------------------------
// Small-scale ALM solver used to validate the machinery against KKT points.
// ---------------------------------------------------------------------------

struct ToyConstraint {
    std::function<double(const std::vector<double>&)> value;  // h_i(x) <= 0
    std::function<std::vector<double>(const std::vector<double>&)> gradient;
};

struct ToyProblem {
    std::function<double(const std::vector<double>&)> objective;
    std::function<std::vector<double>(const std::vector<double>&)> gradient;
    std::vector<ToyConstraint> constraints;
};

struct ToySolveOptions {
    double step = 0.05;
    std::size_t inner_steps = 400;
    std::size_t outer_iters = 40;
    SchedulerConfig sched;
};

struct ToySolution {
    std::vector<double> x;
    std::vector<double> lambda;  // one multiplier per constraint
    bool diverged = false;
    std::size_t outer_iters_run = 0;
};

// Gradient-descent inner solver plus the same multiplier/rho updates the
// trainer uses (constraints occupy the inner-region column of a K x 2 state).
ToySolution solve_toy(const ToyProblem& problem, std::vector<double> x0,
                      const ToySolveOptions& opts = {});

}  // namespace crac
