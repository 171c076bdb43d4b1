#pragma once

#include <cstdint>
#include <string>

#include "crac/losses.hpp"
#include "crac/metrics.hpp"
#include "crac/scheduler.hpp"

namespace crac {

// Training configuration, read from flat `key = value` text (blank lines and
// lines starting with '#' are ignored; unknown keys are errors).
struct TrainConfig {
    std::string data_path;
    std::string out_dir = ".";
    std::string loss = "ce";  // ce|fl|ls|ecp|mbls|nacl|crac-fixed|crac
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    double lr_first = 1e-3;   // first half of the epochs
    double lr_second = 1e-4;  // second half
    std::uint64_t seed = 1;

    double fl_gamma = 3.0;
    double ls_alpha = 0.1;
    double ecp_lambda = 0.1;
    double mbls_lambda = 0.1;
    double mbls_margin = 10.0;
    double nacl_lambda = 0.1;
    double crac_fixed_lambda_inner = 0.1;
    double crac_fixed_lambda_outer = 0.1;

    SchedulerConfig sched;
    ConstraintOptions constraint;

    // Write epoch_%04zu.crck every k epochs (0 = only last/final). last.crck
    // is refreshed at every epoch boundary regardless.
    std::size_t checkpoint_every = 0;
    std::string resume;  // checkpoint path; empty = fresh run

    void validate() const;
};

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin = "config");
TrainConfig load_train_config(const std::string& path);
void write_train_config(const TrainConfig& config, const std::string& path);

bool is_known_loss(const std::string& loss);

}  // namespace crac
