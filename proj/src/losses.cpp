#include "crac/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace crac {

namespace {

struct Dims {
    std::size_t B, K, H, W;
    std::size_t pixels() const { return B * H * W; }
    std::size_t elements() const { return B * K * H * W; }
};

Dims dims_of(Value logits) {
    const Shape& s = logits.shape();
    if (s.size() != 4) throw std::invalid_argument("loss: logits must be [B,K,H,W]");
    return {s[0], s[1], s[2], s[3]};
}

void check_targets(const Dims& d, const std::vector<std::uint8_t>& labels,
                   const std::vector<double>* tau, const std::vector<std::uint8_t>* region) {
    if (labels.size() != d.pixels())
        throw std::invalid_argument("loss: labels length does not match logits");
    if (tau && tau->size() != d.elements())
        throw std::invalid_argument("loss: prior length does not match logits");
    if (region && region->size() != d.pixels())
        throw std::invalid_argument("loss: region length does not match logits");
}

}  // namespace

BatchData make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                     std::size_t num_classes, std::size_t height, std::size_t width,
                     const ConstraintOptions& opts) {
    const std::size_t B = indices.size();
    const std::size_t hw = height * width;
    BatchData batch;
    batch.batch = B;
    batch.num_classes = num_classes;
    batch.height = height;
    batch.width = width;
    batch.images = Tensor::zeros({B, 1, height, width});
    batch.labels.resize(B * hw);
    batch.tau.resize(B * num_classes * hw);
    batch.region.resize(B * hw);

    const double patch_area =
        static_cast<double>(opts.patch_size) * static_cast<double>(opts.patch_size);
    for (std::size_t b = 0; b < B; ++b) {
        const Sample& s = samples.at(indices[b]);
        if (s.image.size() != hw || s.labels.size() != hw)
            throw std::invalid_argument("make_batch: sample extents mismatch");
        for (std::size_t p = 0; p < hw; ++p) {
            batch.images.data[b * hw + p] = static_cast<double>(s.image[p]);
            batch.labels[b * hw + p] = s.labels[p];
        }
        const PriorMap prior = compute_prior(s.labels, height, width, num_classes, opts.patch_size);
        for (std::size_t e = 0; e < num_classes * hw; ++e) {
            double t = prior.tau[e];
            if (opts.normalize_prior) t /= patch_area;
            batch.tau[b * num_classes * hw + e] = t;
        }
        const RegionMask mask = classify_regions(s.labels, height, width, opts.patch_size);
        for (std::size_t p = 0; p < hw; ++p) batch.region[b * hw + p] = mask.region[p];
    }
    return batch;
}

Value cross_entropy(Graph& g, Value logits, const std::vector<std::uint8_t>& labels) {
    const Dims d = dims_of(logits);
    check_targets(d, labels, nullptr, nullptr);
    return g.mean(g.cross_entropy_map(logits, labels));
}

Value focal_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels, double gamma) {
    if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
    const Dims d = dims_of(logits);
    check_targets(d, labels, nullptr, nullptr);
    // mean of -(1 - p_t)^gamma * log p_t
    Value p_t = g.select_channel(g.softmax_channels(logits), labels);
    Value log_p_t = g.select_channel(g.log_softmax_channels(logits), labels);
    Value w = g.pow_const(g.scalar_add(g.scalar_mul(p_t, -1.0), 1.0), gamma);
    return g.scalar_mul(g.mean(g.mul(w, log_p_t)), -1.0);
}

Value label_smoothing_ce(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                         double alpha) {
    if (alpha < 0.0 || alpha >= 1.0)
        throw std::invalid_argument("label_smoothing_ce: alpha must be in [0, 1)");
    const Dims d = dims_of(logits);
    check_targets(d, labels, nullptr, nullptr);
    // Targets (1 - alpha) * onehot + alpha/K uniform, folded into
    // (1 - alpha) * CE + alpha * mean over pixels-and-classes of -log softmax.
    Value ce = cross_entropy(g, logits, labels);
    Value lsm = g.log_softmax_channels(logits);
    const double scale = -alpha / (static_cast<double>(d.K) * static_cast<double>(d.pixels()));
    return g.add(g.scalar_mul(ce, 1.0 - alpha), g.scalar_mul(g.sum(lsm), scale));
}

Value entropy_penalty_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                           double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("entropy_penalty_loss: lambda must be >= 0");
    const Dims d = dims_of(logits);
    check_targets(d, labels, nullptr, nullptr);
    // CE - lambda * mean Shannon entropy; entropy = -sum_k s_k log s_k.
    Value ce = cross_entropy(g, logits, labels);
    Value s_lsm = g.mul(g.softmax_channels(logits), g.log_softmax_channels(logits));
    return g.add(ce, g.scalar_mul(g.sum(s_lsm), lambda / static_cast<double>(d.pixels())));
}

Value margin_logit_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                        double lambda, double margin) {
    if (margin < 0.0) throw std::invalid_argument("margin_logit_loss: margin must be >= 0");
    const Dims d = dims_of(logits);
    check_targets(d, labels, nullptr, nullptr);
    // CE + lambda * mean over pixels and classes of max(0, max_j l_j - l_k - m)
    Value ce = cross_entropy(g, logits, labels);
    Value gaps = g.sub(g.broadcast_channels(g.channel_max(logits), d.K), logits);
    Value hinge = g.relu(g.scalar_add(gaps, -margin));
    return g.add(ce, g.scalar_mul(g.mean(hinge), lambda));
}

namespace {

// Region indicator masks lifted to [B,K,H,W], scaled so that summing the
// masked penalty yields the desired normalization.
std::vector<double> region_mask(const Dims& d, const std::vector<std::uint8_t>& region,
                                std::uint8_t which, double scale) {
    std::vector<double> m(d.elements(), 0.0);
    const std::size_t hw = d.H * d.W;
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t p = 0; p < hw; ++p)
            if (region[b * hw + p] == which)
                for (std::size_t k = 0; k < d.K; ++k) m[(b * d.K + k) * hw + p] = scale;
    return m;
}

KrMatrix violation_matrix(const Dims& d, const Tensor& z, const std::vector<std::uint8_t>& region) {
    KrMatrix out = KrMatrix::constant(d.K, 0.0);
    std::size_t counts[2] = {0, 0};
    const std::size_t hw = d.H * d.W;
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t p = 0; p < hw; ++p) ++counts[region[b * hw + p]];
    for (std::size_t b = 0; b < d.B; ++b) {
        for (std::size_t k = 0; k < d.K; ++k) {
            const double* zk = z.data.data() + (b * d.K + k) * hw;
            for (std::size_t p = 0; p < hw; ++p) out.at(k, region[b * hw + p]) += zk[p];
        }
    }
    for (std::size_t k = 0; k < d.K; ++k)
        for (std::size_t r = 0; r < 2; ++r)
            if (counts[r] > 0) out.at(k, r) /= static_cast<double>(counts[r]);
    return out;
}

LossBreakdown weighted_abs_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                                const std::vector<double>& tau,
                                const std::vector<std::uint8_t>& region, const KrMatrix& weights,
                                const char* what) {
    const Dims d = dims_of(logits);
    check_targets(d, labels, &tau, &region);
    if (weights.num_classes != d.K)
        throw std::invalid_argument(std::string(what) + ": weight matrix must be K x 2");
    for (double w : weights.v)
        if (w < 0.0) throw std::invalid_argument(std::string(what) + ": negative penalty weight");

    const std::size_t hw = d.H * d.W;
    std::vector<double> wmap(d.elements());
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t k = 0; k < d.K; ++k)
            for (std::size_t p = 0; p < hw; ++p)
                wmap[(b * d.K + k) * hw + p] = weights.at(k, region[b * hw + p]);

    Value ce = cross_entropy(g, logits, labels);
    Value z = g.sub(g.constant(Tensor({d.B, d.K, d.H, d.W}, tau)), logits);
    Value weighted = g.mul(g.constant(Tensor({d.B, d.K, d.H, d.W}, std::move(wmap))), g.abs(z));
    const double norm = 1.0 / static_cast<double>(d.elements());
    Value pin = g.scalar_mul(
        g.sum(g.mul(weighted, g.constant(Tensor({d.B, d.K, d.H, d.W},
                                                region_mask(d, region, kRegionInner, 1.0))))),
        norm);
    Value pout = g.scalar_mul(
        g.sum(g.mul(weighted, g.constant(Tensor({d.B, d.K, d.H, d.W},
                                                region_mask(d, region, kRegionOuter, 1.0))))),
        norm);

    LossBreakdown out;
    out.total = g.add(g.add(ce, pin), pout);
    out.total_value = out.total.item();
    out.ce_term = ce.item();
    out.penalty_term_inner = pin.item();
    out.penalty_term_outer = pout.item();
    out.mean_violation = violation_matrix(d, z.tensor(), region);
    return out;
}

}  // namespace

LossBreakdown nacl_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                        const std::vector<double>& tau, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("nacl_loss: lambda must be >= 0");
    const Dims d = dims_of(logits);
    // The single-weight objective is the uniform special case of the
    // class/region-weighted penalty; regions come from the annotation.
    const std::size_t hw = d.H * d.W;
    std::vector<std::uint8_t> region(d.pixels());
    check_targets(d, labels, &tau, &region);
    for (std::size_t b = 0; b < d.B; ++b) {
        const std::vector<std::uint8_t> img(labels.begin() + b * hw, labels.begin() + (b + 1) * hw);
        const RegionMask mask = classify_regions(img, d.H, d.W);
        for (std::size_t p = 0; p < hw; ++p) region[b * hw + p] = mask.region[p];
    }
    return weighted_abs_loss(g, logits, labels, tau, region, KrMatrix::constant(d.K, lambda),
                             "nacl_loss");
}

LossBreakdown crac_fixed_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                              const std::vector<double>& tau,
                              const std::vector<std::uint8_t>& region, const KrMatrix& weights) {
    return weighted_abs_loss(g, logits, labels, tau, region, weights, "crac_fixed_loss");
}

LossBreakdown crac_alm_loss(Graph& g, Value logits, const std::vector<std::uint8_t>& labels,
                            const std::vector<double>& tau,
                            const std::vector<std::uint8_t>& region, const KrMatrix& lambda,
                            const KrMatrix& rho, bool signed_violation) {
    const Dims d = dims_of(logits);
    check_targets(d, labels, &tau, &region);
    if (lambda.num_classes != d.K || rho.num_classes != d.K)
        throw std::invalid_argument("crac_alm_loss: lambda/rho must be K x 2");
    for (double v : lambda.v)
        if (!(v > 0.0)) throw std::invalid_argument("crac_alm_loss: lambda must be positive");
    for (double v : rho.v)
        if (!(v > 0.0)) throw std::invalid_argument("crac_alm_loss: rho must be positive");

    const std::size_t hw = d.H * d.W;
    std::vector<double> rho_map(d.elements()), lambda_map(d.elements());
    for (std::size_t b = 0; b < d.B; ++b) {
        for (std::size_t k = 0; k < d.K; ++k) {
            for (std::size_t p = 0; p < hw; ++p) {
                const std::uint8_t r = region[b * hw + p];
                rho_map[(b * d.K + k) * hw + p] = rho.at(k, r);
                lambda_map[(b * d.K + k) * hw + p] = lambda.at(k, r);
            }
        }
    }

    std::size_t counts[2] = {0, 0};
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t p = 0; p < hw; ++p) ++counts[region[b * hw + p]];

    Value ce = cross_entropy(g, logits, labels);
    Value z = g.sub(g.constant(Tensor({d.B, d.K, d.H, d.W}, tau)), logits);
    Value z_arg = signed_violation ? z : g.abs(z);
    Value penalty = g.phr_map(z_arg, std::move(rho_map), std::move(lambda_map));

    // Per-region means over pixels and classes; the scale is folded into the
    // indicator masks (a region with no pixels contributes an exact zero).
    const auto scaled_mask = [&](std::uint8_t which) {
        const double scale = counts[which] == 0
                                 ? 0.0
                                 : 1.0 / (static_cast<double>(counts[which]) *
                                          static_cast<double>(d.K));
        return g.constant(Tensor({d.B, d.K, d.H, d.W}, region_mask(d, region, which, scale)));
    };
    Value pin = g.sum(g.mul(penalty, scaled_mask(kRegionInner)));
    Value pout = g.sum(g.mul(penalty, scaled_mask(kRegionOuter)));

    LossBreakdown out;
    out.total = g.add(g.add(ce, pin), pout);
    out.total_value = out.total.item();
    out.ce_term = ce.item();
    out.penalty_term_inner = pin.item();
    out.penalty_term_outer = pout.item();
    out.mean_violation = violation_matrix(d, z.tensor(), region);
    return out;
}

ValidationBatchStats constraint_stats(const Tensor& logits,
                                      const std::vector<std::uint8_t>& labels,
                                      const std::vector<double>& tau,
                                      const std::vector<std::uint8_t>& region,
                                      const KrMatrix& lambda, const KrMatrix& rho,
                                      bool signed_violation) {
    if (logits.shape.size() != 4) throw std::invalid_argument("constraint_stats: logits rank");
    const Dims d{logits.shape[0], logits.shape[1], logits.shape[2], logits.shape[3]};
    check_targets(d, labels, &tau, &region);
    const std::size_t hw = d.H * d.W;

    ValidationBatchStats stats;
    stats.num_classes = d.K;
    stats.mean_pprime.assign(d.K * 2, 0.0);
    stats.mean_abs_violation.assign(d.K * 2, 0.0);
    stats.mean_violation.assign(d.K * 2, 0.0);

    std::size_t counts[2] = {0, 0};
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t p = 0; p < hw; ++p) ++counts[region[b * hw + p]];
    stats.pixel_count[0] = counts[0];
    stats.pixel_count[1] = counts[1];

    for (std::size_t b = 0; b < d.B; ++b) {
        for (std::size_t k = 0; k < d.K; ++k) {
            const double* lk = logits.data.data() + (b * d.K + k) * hw;
            const double* tk = tau.data() + (b * d.K + k) * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                const std::uint8_t r = region[b * hw + p];
                const double zs = tk[p] - lk[p];
                const double z = signed_violation ? zs : std::fabs(zs);
                stats.mean_pprime[k * 2 + r] += phr(z, rho.at(k, r), lambda.at(k, r)).derivative;
                stats.mean_abs_violation[k * 2 + r] += std::fabs(zs);
                stats.mean_violation[k * 2 + r] += zs;
            }
        }
    }
    for (std::size_t k = 0; k < d.K; ++k) {
        for (std::size_t r = 0; r < 2; ++r) {
            if (counts[r] == 0) continue;
            const double w = static_cast<double>(counts[r]);
            stats.mean_pprime[k * 2 + r] /= w;
            stats.mean_abs_violation[k * 2 + r] /= w;
            stats.mean_violation[k * 2 + r] /= w;
        }
    }
    return stats;
}

}  // namespace crac
