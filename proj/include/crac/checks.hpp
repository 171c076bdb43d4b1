#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crac/penalty.hpp"

namespace crac {

struct CheckItem {
    std::string name;
    double value = 0.0;  // observed (max error, final position, ...)
    double bound = 0.0;  // threshold the value was compared against
    bool pass = false;
    std::string note;
};

// Central-finite-difference checks for every graph primitive and every loss
// on random small instances (64-bit, step 1e-4, relative error bound 1e-3).
// Instances that land within finite-difference reach of a kink are
// regenerated, never asserted.
std::vector<CheckItem> gradient_battery(std::size_t instances_per_case = 100,
                                        std::uint64_t seed = 2026);

// Small constrained problems with known KKT points, solved by the ALM
// machinery end to end.
std::vector<CheckItem> kkt_battery();

// The four penalty axioms for an arbitrary penalty function.
std::vector<CheckItem> axiom_battery(const PenaltyFunction& penalty,
                                     std::size_t sample_count = 10000);

bool all_pass(const std::vector<CheckItem>& items);
void print_items(const std::vector<CheckItem>& items);

}  // namespace crac
