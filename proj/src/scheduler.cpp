#include "crac/scheduler.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "crac/checkpoint.hpp"

namespace crac {

void SchedulerConfig::validate() const {
    if (lambda_init <= 0.0 || rho_init <= 0.0)
        throw std::invalid_argument("scheduler: lambda_init and rho_init must be positive");
    if (gamma < 1.0) throw std::invalid_argument("scheduler: gamma must be >= 1");
    if (mu <= 0.0 || mu > 1.0) throw std::invalid_argument("scheduler: mu must be in (0, 1]");
    if (lambda_min <= 0.0 || lambda_min > lambda_max)
        throw std::invalid_argument("scheduler: need 0 < lambda_min <= lambda_max");
}

SchedulerState SchedulerState::init(std::size_t num_classes, const SchedulerConfig& cfg) {
    cfg.validate();
    SchedulerState st;
    st.config = cfg;
    st.lambda = KrMatrix::constant(num_classes, cfg.lambda_init);
    st.rho = KrMatrix::constant(num_classes, cfg.rho_init);
    st.prev_violation = KrMatrix::constant(num_classes, 0.0);
    return st;
}

void SchedulerState::validate() const {
    config.validate();
    for (double l : lambda.v)
        if (!(l >= config.lambda_min && l <= config.lambda_max))
            throw std::runtime_error("scheduler: lambda out of bounds: " + std::to_string(l));
    for (double r : rho.v)
        if (!(r > 0.0) || !std::isfinite(r))
            throw std::runtime_error("scheduler: rho must be positive and finite");
}

void SchedulerState::quantize_to_storage() {
    for (double& l : lambda.v)
        l = std::min(config.lambda_max, std::max(config.lambda_min, quantize_f32(l)));
    for (double& r : rho.v) r = quantize_f32(r);
    for (double& p : prev_violation.v) p = quantize_f32(p);
}

ValidationAccumulator::ValidationAccumulator(std::size_t num_classes)
    : num_classes_(num_classes),
      sum_pprime_(num_classes * 2, 0.0),
      sum_abs_(num_classes * 2, 0.0),
      sum_signed_(num_classes * 2, 0.0) {}

void ValidationAccumulator::add(const ValidationBatchStats& batch) {
    if (batch.num_classes != num_classes_)
        throw std::invalid_argument("accumulate_validation: class count mismatch");
    for (std::size_t k = 0; k < num_classes_; ++k) {
        for (std::size_t r = 0; r < 2; ++r) {
            const double w = static_cast<double>(batch.pixel_count[r]);
            const std::size_t c = k * 2 + r;
            sum_pprime_[c] += w * batch.mean_pprime[c];
            sum_abs_[c] += w * batch.mean_abs_violation[c];
            sum_signed_[c] += w * batch.mean_violation[c];
        }
    }
    count_[0] += batch.pixel_count[0];
    count_[1] += batch.pixel_count[1];
}

AccumulatedStats ValidationAccumulator::finalize() const {
    AccumulatedStats acc;
    acc.num_classes = num_classes_;
    acc.mean_pprime = KrMatrix::constant(num_classes_, 0.0);
    acc.mean_abs_violation = KrMatrix::constant(num_classes_, 0.0);
    acc.mean_violation = KrMatrix::constant(num_classes_, 0.0);
    acc.pixel_count[0] = count_[0];
    acc.pixel_count[1] = count_[1];
    for (std::size_t k = 0; k < num_classes_; ++k) {
        for (std::size_t r = 0; r < 2; ++r) {
            if (count_[r] == 0) continue;
            const std::size_t c = k * 2 + r;
            const double w = static_cast<double>(count_[r]);
            acc.mean_pprime.v[c] = sum_pprime_[c] / w;
            acc.mean_abs_violation.v[c] = sum_abs_[c] / w;
            acc.mean_violation.v[c] = sum_signed_[c] / w;
        }
    }
    return acc;
}

void update_multipliers(SchedulerState& state, const AccumulatedStats& acc) {
    if (acc.num_classes != state.lambda.num_classes)
        throw std::invalid_argument("update_multipliers: class count mismatch");
    for (std::size_t k = 0; k < acc.num_classes; ++k) {
        for (std::size_t r = 0; r < 2; ++r) {
            if (!acc.has_pixels(r)) continue;  // no evidence: carry lambda forward
            const double m = acc.mean_pprime.at(k, r);
            if (!std::isfinite(m))
                throw std::runtime_error("update_multipliers: non-finite accumulated value");
            state.lambda.at(k, r) =
                std::min(state.config.lambda_max, std::max(state.config.lambda_min, m));
        }
    }
    state.epoch += 1;
}

void update_rho(SchedulerState& state, const AccumulatedStats& acc) {
    if (acc.num_classes != state.rho.num_classes)
        throw std::invalid_argument("update_rho: class count mismatch");
    if (!state.has_prev) {
        for (std::size_t k = 0; k < acc.num_classes; ++k)
            for (std::size_t r = 0; r < 2; ++r)
                if (acc.has_pixels(r)) state.prev_violation.at(k, r) = acc.mean_abs_violation.at(k, r);
        state.has_prev = true;
        return;
    }
    for (std::size_t k = 0; k < acc.num_classes; ++k) {
        for (std::size_t r = 0; r < 2; ++r) {
            if (!acc.has_pixels(r)) continue;
            const double cur = acc.mean_abs_violation.at(k, r);
            if (cur > state.config.mu * state.prev_violation.at(k, r))
                state.rho.at(k, r) *= state.config.gamma;
            state.prev_violation.at(k, r) = cur;
        }
    }
}

ToySolution solve_toy(const ToyProblem& problem, std::vector<double> x0,
                      const ToySolveOptions& opts) {
    const std::size_t n = problem.constraints.size();
    if (n == 0) throw std::invalid_argument("solve_toy: problem has no constraints");
    SchedulerState st = SchedulerState::init(n, opts.sched);

    ToySolution sol;
    sol.x = std::move(x0);

    const auto finite = [](const std::vector<double>& v) {
        for (double e : v)
            if (!std::isfinite(e)) return false;
        return true;
    };

    for (std::size_t outer = 0; outer < opts.outer_iters; ++outer) {
        // Inner iterations: gradient descent on the penalized objective.
        for (std::size_t t = 0; t < opts.inner_steps; ++t) {
            std::vector<double> g = problem.gradient(sol.x);
            for (std::size_t i = 0; i < n; ++i) {
                const double hi = problem.constraints[i].value(sol.x);
                const double dp = phr(hi, st.rho.at(i, 0), st.lambda.at(i, 0)).derivative;
                if (dp == 0.0) continue;
                const std::vector<double> gh = problem.constraints[i].gradient(sol.x);
                for (std::size_t d = 0; d < g.size(); ++d) g[d] += dp * gh[d];
            }
            for (std::size_t d = 0; d < sol.x.size(); ++d) sol.x[d] -= opts.step * g[d];
            if (!finite(sol.x)) {
                sol.diverged = true;
                sol.outer_iters_run = outer;
                return sol;
            }
        }

        // Outer update through the same machinery the trainer uses; the
        // constraints occupy the inner-region column.
        ValidationBatchStats vb;
        vb.num_classes = n;
        vb.mean_pprime.assign(n * 2, 0.0);
        vb.mean_abs_violation.assign(n * 2, 0.0);
        vb.mean_violation.assign(n * 2, 0.0);
        vb.pixel_count[0] = 1;
        vb.pixel_count[1] = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double hi = problem.constraints[i].value(sol.x);
            vb.mean_pprime[i * 2] = phr(hi, st.rho.at(i, 0), st.lambda.at(i, 0)).derivative;
            vb.mean_abs_violation[i * 2] = std::max(0.0, hi);  // inequality violation
            vb.mean_violation[i * 2] = hi;
        }
        ValidationAccumulator accum(n);
        accum.add(vb);
        const AccumulatedStats acc = accum.finalize();
        update_multipliers(st, acc);
        update_rho(st, acc);
        sol.outer_iters_run = outer + 1;
    }

    sol.lambda.resize(n);
    for (std::size_t i = 0; i < n; ++i) sol.lambda[i] = st.lambda.at(i, 0);
    return sol;
}

}  // namespace crac
