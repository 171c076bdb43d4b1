#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace crac {

struct PenaltyEval {
    double value = 0.0;
    double derivative = 0.0;  // dP/dz
};

// Penalty-Lagrangian function P(z, rho, lambda). Implementations must be pure
// and cheap; the axiom checker probes them millions of times.
class PenaltyFunction {
public:
    virtual ~PenaltyFunction() = default;
    virtual PenaltyEval eval(double z, double rho, double lambda) const = 0;
    virtual std::string name() const = 0;
};

// Powell-Hestenes-Rockafellar penalty:
//   P = lambda*z + rho*z^2/2   when lambda + rho*z >= 0
//   P = -lambda^2 / (2*rho)    otherwise
// P'(z) = max(0, lambda + rho*z).
class PhrPenalty final : public PenaltyFunction {
public:
    PenaltyEval eval(double z, double rho, double lambda) const override;
    std::string name() const override { return "phr"; }
};

// Deliberately non-compliant reference: P = lambda*z with constant derivative
// lambda. Satisfies the first two axioms only; used to prove the axiom
// checker has teeth.
class LinearPenalty final : public PenaltyFunction {
public:
    PenaltyEval eval(double z, double rho, double lambda) const override;
    std::string name() const override { return "linear"; }
};

PenaltyEval phr(double z, double rho, double lambda);

std::unique_ptr<PenaltyFunction> make_penalty(const std::string& name);

struct AxiomCounterexample {
    int axiom = 0;
    double z = 0.0, rho = 0.0, lambda = 0.0;
    double observed = 0.0;
};

struct AxiomReport {
    bool axiom1 = false;  // P' >= 0 everywhere
    bool axiom2 = false;  // P'(0) == lambda
    bool axiom3 = false;  // rho -> inf, z > 0  =>  P' -> inf (monotone along the sequence)
    bool axiom4 = false;  // rho -> inf, z < 0  =>  P' -> 0
    std::vector<AxiomCounterexample> failures;
    bool all_pass() const { return axiom1 && axiom2 && axiom3 && axiom4; }
};

struct AxiomCheckConfig {
    std::size_t sample_count = 10000;  // must be >= 1000
    std::vector<double> rho_growth;    // defaults to 10^0 .. 10^12
    double lambda_min = 1e-3;
    double lambda_max = 1e3;
    double divergence_bound = 1e8;   // axiom 3: final P' must exceed this
    double vanishing_bound = 1e-9;   // axiom 4: final P' must drop below this
    std::uint64_t seed = 1234;
};

// The four penalty axioms, restated at an assertable level: axioms 3 and 4
// are limits, checked as monotone threshold crossings along an explicit
// geometric rho sequence.
AxiomReport check_axioms(const PenaltyFunction& penalty, const AxiomCheckConfig& cfg = {});

}  // namespace crac
