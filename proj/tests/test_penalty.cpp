#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crac/penalty.hpp"
#include "crac/rng.hpp"

using namespace crac;

TEST_CASE("phr at zero: value 0, derivative lambda") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const double rho = std::exp(rng.uniform(-3, 6));
        const double lambda = std::exp(rng.uniform(-3, 6));
        const PenaltyEval e = phr(0.0, rho, lambda);
        CHECK(e.value == 0.0);
        CHECK(std::fabs(e.derivative - lambda) < 1e-12 * std::max(1.0, lambda));
    }
}

TEST_CASE("phr hand values") {
    const PenaltyEval a = phr(1.0, 2.0, 1.0);
    CHECK(a.value == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(a.derivative == doctest::Approx(3.0).epsilon(1e-15));

    // second branch: lambda + rho z = 0.5 - 1 < 0
    const PenaltyEval b = phr(-1.0, 1.0, 0.5);
    CHECK(b.value == doctest::Approx(-0.125).epsilon(1e-15));
    CHECK(b.derivative == 0.0);
}

TEST_CASE("phr rejects non-positive rho/lambda and non-finite z") {
    CHECK_THROWS_AS(phr(0.0, 0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(phr(0.0, 1.0, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(phr(std::numeric_limits<double>::infinity(), 1.0, 1.0),
                    std::invalid_argument);
}

TEST_CASE("phr branches agree at the kink") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const double rho = std::exp(rng.uniform(-2, 4));
        const double lambda = std::exp(rng.uniform(-2, 4));
        const double zk = -lambda / rho;
        // branch 1 formula at the kink
        const double v1 = lambda * zk + 0.5 * rho * zk * zk;
        const double v2 = -lambda * lambda / (2.0 * rho);
        CHECK(std::fabs(v1 - v2) <= 1e-12 * std::max(1.0, std::fabs(v2)));
        // derivative from branch 1 is lambda + rho z = 0, branch 2 is 0
        CHECK(std::fabs(lambda + rho * zk) <= 1e-12 * std::max(1.0, lambda));
    }
}

TEST_CASE("phr derivative matches finite differences away from the kink") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double rho = std::exp(rng.uniform(-2, 3));
        const double lambda = std::exp(rng.uniform(-2, 3));
        const double z = rng.uniform(-5, 5);
        if (std::fabs(lambda + rho * z) / rho < 1e-3) continue;  // near kink
        const double h = 1e-6;
        const double fd = (phr(z + h, rho, lambda).value - phr(z - h, rho, lambda).value) / (2 * h);
        CHECK(std::fabs(fd - phr(z, rho, lambda).derivative) <
              1e-8 * std::max({1.0, std::fabs(fd), rho}));
    }
}

TEST_CASE("phr value is midpoint-convex in z") {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        const double rho = std::exp(rng.uniform(-2, 3));
        const double lambda = std::exp(rng.uniform(-2, 3));
        const double a = rng.uniform(-10, 10), b = rng.uniform(-10, 10);
        const double mid = phr(0.5 * (a + b), rho, lambda).value;
        const double chord = 0.5 * (phr(a, rho, lambda).value + phr(b, rho, lambda).value);
        CHECK(mid <= chord + 1e-12 * std::max(1.0, std::fabs(chord)));
    }
}

TEST_CASE("phr value never drops below the flat branch") {
    Rng rng(13);
    for (int i = 0; i < 2000; ++i) {
        const double rho = std::exp(rng.uniform(-2, 3));
        const double lambda = std::exp(rng.uniform(-2, 3));
        const double z = rng.uniform(-20, 20);
        const double floor = -lambda * lambda / (2.0 * rho);
        CHECK(phr(z, rho, lambda).value >= floor - 1e-12 * std::max(1.0, std::fabs(floor)));
    }
}

TEST_CASE("axiom gate: PHR passes all four, the linear penalty fails 3 and 4") {
    const AxiomReport good = check_axioms(PhrPenalty{});
    CHECK(good.axiom1);
    CHECK(good.axiom2);
    CHECK(good.axiom3);
    CHECK(good.axiom4);
    CHECK(good.all_pass());

    const AxiomReport bad = check_axioms(LinearPenalty{});
    CHECK(bad.axiom1);
    CHECK(bad.axiom2);
    CHECK_FALSE(bad.axiom3);
    CHECK_FALSE(bad.axiom4);
    CHECK_FALSE(bad.failures.empty());
}

TEST_CASE("axiom gate rejects undersized samples") {
    AxiomCheckConfig cfg;
    cfg.sample_count = 10;
    CHECK_THROWS_AS(check_axioms(PhrPenalty{}, cfg), std::invalid_argument);
}

TEST_CASE("penalty registry") {
    CHECK(make_penalty("phr")->name() == "phr");
    CHECK(make_penalty("linear")->name() == "linear");
    CHECK_THROWS_AS(make_penalty("nope"), std::invalid_argument);
}
