#include "crac/penalty.hpp"

#include <cmath>
#include <stdexcept>

#include "crac/rng.hpp"

namespace crac {

PenaltyEval PhrPenalty::eval(double z, double rho, double lambda) const {
    return phr(z, rho, lambda);
}

PenaltyEval LinearPenalty::eval(double z, double rho, double lambda) const {
    if (rho <= 0.0 || lambda <= 0.0)
        throw std::invalid_argument("penalty: rho and lambda must be positive");
    return {lambda * z, lambda};
}

PenaltyEval phr(double z, double rho, double lambda) {
    if (rho <= 0.0) throw std::invalid_argument("phr: rho must be positive");
    if (lambda <= 0.0) throw std::invalid_argument("phr: lambda must be positive");
    if (!std::isfinite(z)) throw std::invalid_argument("phr: z must be finite");
    const double t = lambda + rho * z;
    if (t >= 0.0) return {lambda * z + 0.5 * rho * z * z, t};
    return {-lambda * lambda / (2.0 * rho), 0.0};
}

std::unique_ptr<PenaltyFunction> make_penalty(const std::string& name) {
    if (name == "phr") return std::make_unique<PhrPenalty>();
    if (name == "linear") return std::make_unique<LinearPenalty>();
    throw std::invalid_argument("unknown penalty function: " + name);
}

AxiomReport check_axioms(const PenaltyFunction& penalty, const AxiomCheckConfig& cfg) {
    if (cfg.sample_count < 1000)
        throw std::invalid_argument("check_axioms: sample_count must be >= 1000");

    std::vector<double> rho_seq = cfg.rho_growth;
    if (rho_seq.empty())
        for (int e = 0; e <= 12; ++e) rho_seq.push_back(std::pow(10.0, e));

    AxiomReport report;
    Rng rng(cfg.seed);
    const auto note = [&report](int axiom, double z, double rho, double lambda, double obs) {
        if (report.failures.size() < 32) report.failures.push_back({axiom, z, rho, lambda, obs});
    };

    // Axioms 1-2 on random triples.
    bool a1 = true, a2 = true;
    for (std::size_t i = 0; i < cfg.sample_count; ++i) {
        const double z = rng.uniform(-10.0, 10.0);
        const double rho = std::exp(rng.uniform(std::log(1e-3), std::log(1e6)));
        const double lambda = std::exp(rng.uniform(std::log(cfg.lambda_min), std::log(cfg.lambda_max)));
        const double d = penalty.eval(z, rho, lambda).derivative;
        if (!(d >= 0.0)) {
            a1 = false;
            note(1, z, rho, lambda, d);
        }
        const double d0 = penalty.eval(0.0, rho, lambda).derivative;
        if (std::fabs(d0 - lambda) > 1e-12 * std::max(1.0, lambda)) {
            a2 = false;
            note(2, 0.0, rho, lambda, d0);
        }
    }
    report.axiom1 = a1;
    report.axiom2 = a2;

    // Axioms 3-4 along the growth sequence, lambda held inside its bounds.
    const std::size_t rays = std::max<std::size_t>(64, cfg.sample_count / 100);
    bool a3 = true, a4 = true;
    for (std::size_t i = 0; i < rays; ++i) {
        const double lambda = rng.uniform(cfg.lambda_min, cfg.lambda_max);
        const double zp = rng.uniform(0.01, 5.0);
        const double zn = -rng.uniform(0.01, 5.0);

        double prev = -std::numeric_limits<double>::infinity();
        bool monotone = true;
        double last_p = 0.0;
        for (double rho : rho_seq) {
            const double d = penalty.eval(zp, rho, lambda).derivative;
            monotone = monotone && d >= prev;
            prev = d;
            last_p = d;
        }
        if (!monotone || last_p <= cfg.divergence_bound) {
            a3 = false;
            note(3, zp, rho_seq.back(), lambda, last_p);
        }

        const double last_n = penalty.eval(zn, rho_seq.back(), lambda).derivative;
        if (last_n >= cfg.vanishing_bound) {
            a4 = false;
            note(4, zn, rho_seq.back(), lambda, last_n);
        }
    }
    report.axiom3 = a3;
    report.axiom4 = a4;
    return report;
}

}  // namespace crac
