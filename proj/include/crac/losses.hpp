#pragma once

#include <cstdint>
#include <vector>

#include "crac/datagen.hpp"
#include "crac/priors.hpp"
#include "crac/scheduler.hpp"
#include "crac/tensor.hpp"

namespace crac {

// Options shared by the constraint losses: the class-count prior and how the
// constraint argument z is formed. The paper writes signed z = tau - l; the
// absolute form |tau - l| is kept as a documented switch, as is normalizing
// tau from counts to proportions.
struct ConstraintOptions {
    std::size_t patch_size = 3;
    bool normalize_prior = false;
    bool signed_violation = true;
};

// A training batch: image tensor plus per-pixel targets and the derived
// prior/region fields, all row-major [B,...].
struct BatchData {
    Tensor images;                     // [B,1,H,W]
    std::vector<std::uint8_t> labels;  // B*H*W
    std::vector<double> tau;           // B*K*H*W
    std::vector<std::uint8_t> region;  // B*H*W
    std::size_t batch = 0, num_classes = 0, height = 0, width = 0;
};

BatchData make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                     std::size_t num_classes, std::size_t height, std::size_t width,
                     const ConstraintOptions& opts = {});

// Mean over pixels of -log softmax probability of the true class, fused with
// the log-sum-exp stabilized softmax.
Value cross_entropy(Graph& g, Value logits, const std::vector<std::uint8_t>& labels);

// Scalar baselines.
Value focal_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                 double gamma = 3.0);
Value label_smoothing_ce(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                         double alpha = 0.1);
Value entropy_penalty_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                           double lambda = 0.1);
Value margin_logit_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                        double lambda = 0.1, double margin = 10.0);

struct LossBreakdown {
    Value total;
    double total_value = 0.0;
    double ce_term = 0.0;
    double penalty_term_inner = 0.0;
    double penalty_term_outer = 0.0;
    KrMatrix mean_violation;  // signed mean (tau_k - l_k) per (class, region)
};

// CE + lambda * mean over pixels and classes of |tau - l| (Eq. with a single
// uniform weight).
LossBreakdown nacl_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                        const std::vector<double>& tau, double lambda);

// Fixed per-(class, region) weights Lambda (K x 2, non-negative); the penalty
// keeps the same all-pixel mean normalization so a uniform Lambda reduces
// exactly to nacl_loss.
LossBreakdown crac_fixed_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                              const std::vector<double>& tau,
                              const std::vector<std::uint8_t>& region, const KrMatrix& weights);

// The ALM objective: CE plus the per-region means over pixels and classes of
// PHR(z, rho_{k,r}, lambda_{k,r}).
LossBreakdown crac_alm_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                            const std::vector<double>& tau,
                            const std::vector<std::uint8_t>& region, const KrMatrix& lambda,
                            const KrMatrix& rho, bool signed_violation = true);

// Flat (non-differentiated) constraint statistics for the scheduler: per
// (class, region) means of P'(z, rho, lambda), |tau - l| and signed tau - l
// over the given batch.
ValidationBatchStats constraint_stats(const Tensor& logits,
                                      const std::vector<std::uint8_t>& labels,
                                      const std::vector<double>& tau,
                                      const std::vector<std::uint8_t>& region,
                                      const KrMatrix& lambda, const KrMatrix& rho,
                                      bool signed_violation = true);

}  // namespace crac
