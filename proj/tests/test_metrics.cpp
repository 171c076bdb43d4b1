#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "crac/metrics.hpp"
#include "crac/rng.hpp"

using namespace crac;

namespace {

std::vector<std::uint8_t> rand_mask(Rng& rng, std::size_t n, double density) {
    std::vector<std::uint8_t> out(n, 0);
    for (auto& v : out) v = rng.uniform01() < density ? 1 : 0;
    return out;
}

// All-pairs brute-force HD95 with the same boundary and percentile
// conventions as the implementation, but no distance transform.
double hd95_oracle(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                   std::uint8_t cls, std::size_t H, std::size_t W) {
    const auto boundary = [&](const std::vector<std::uint8_t>& m) {
        std::vector<std::pair<double, double>> out;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                if (m[i * W + j] != cls) continue;
                const bool edge = i == 0 || i + 1 == H || j == 0 || j + 1 == W;
                if (edge || m[(i - 1) * W + j] != cls || m[(i + 1) * W + j] != cls ||
                    m[i * W + j - 1] != cls || m[i * W + j + 1] != cls)
                    out.emplace_back(static_cast<double>(i), static_cast<double>(j));
            }
        return out;
    };
    const auto ba = boundary(a), bb = boundary(b);
    const bool a_empty = std::none_of(a.begin(), a.end(), [&](std::uint8_t v) { return v == cls; });
    const bool b_empty = std::none_of(b.begin(), b.end(), [&](std::uint8_t v) { return v == cls; });
    if (a_empty && b_empty) return 0.0;
    if (a_empty != b_empty) return std::sqrt(static_cast<double>(H * H + W * W));

    std::vector<double> pooled;
    const auto nearest = [](const std::pair<double, double>& p,
                            const std::vector<std::pair<double, double>>& set) {
        double best = 1e300;
        for (const auto& q : set) {
            const double dx = p.first - q.first, dy = p.second - q.second;
            best = std::min(best, dx * dx + dy * dy);
        }
        return std::sqrt(best);
    };
    for (const auto& p : ba) pooled.push_back(nearest(p, bb));
    for (const auto& q : bb) pooled.push_back(nearest(q, ba));
    std::sort(pooled.begin(), pooled.end());
    const std::size_t n = pooled.size();
    if (n == 1) return pooled[0];
    const double h = 0.95 * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) return pooled[n - 1];
    return pooled[lo] + (h - static_cast<double>(lo)) * (pooled[lo + 1] - pooled[lo]);
}

double ece_oracle(const std::vector<double>& conf, const std::vector<std::uint8_t>& correct,
                  std::size_t bins) {
    double total = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
        double csum = 0.0;
        std::size_t n = 0, hits = 0;
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
            const bool in_bin = b == 0 ? conf[i] <= hi : (conf[i] > lo && conf[i] <= hi);
            if (!in_bin) continue;
            csum += conf[i];
            hits += correct[i];
            ++n;
        }
        if (n == 0) continue;
        total += (static_cast<double>(n) / conf.size()) *
                 std::fabs(static_cast<double>(hits) / n - csum / n);
    }
    return total;
}

}  // namespace

TEST_CASE("dice basics") {
    const std::vector<std::uint8_t> a = {1, 1, 0, 0};
    CHECK(dice(a, a, 1) == 1.0);
    const std::vector<std::uint8_t> b = {0, 0, 1, 1};
    CHECK(dice(a, b, 1) == 0.0);
    // |A| = |B| = 4, overlap 2 -> 0.5
    const std::vector<std::uint8_t> c = {1, 1, 1, 1, 0, 0, 0, 0};
    const std::vector<std::uint8_t> d = {0, 0, 1, 1, 1, 1, 0, 0};
    CHECK(dice(c, d, 1) == 0.5);
    // both empty -> 1 by convention
    const std::vector<std::uint8_t> z(4, 0);
    CHECK(dice(z, z, 1) == 1.0);
}

TEST_CASE("dice is symmetric") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const auto a = rand_mask(rng, 64, 0.4);
        const auto b = rand_mask(rng, 64, 0.4);
        CHECK(dice(a, b, 1) == dice(b, a, 1));
    }
}

TEST_CASE("hd95 basics") {
    std::vector<std::uint8_t> a(49, 0), b(49, 0);
    a[3 * 7 + 2] = 1;
    b[3 * 7 + 2] = 1;
    CHECK(hd95(a, b, 1, 7, 7) == 0.0);
    // two single pixels 3 apart
    std::vector<std::uint8_t> c(49, 0);
    c[3 * 7 + 5] = 1;
    CHECK(hd95(a, c, 1, 7, 7) == doctest::Approx(3.0).epsilon(1e-12));
    // one empty -> image diagonal
    const std::vector<std::uint8_t> empty(49, 0);
    CHECK(hd95(a, empty, 1, 7, 7) == doctest::Approx(std::sqrt(98.0)).epsilon(1e-12));
    CHECK(hd95(empty, empty, 1, 7, 7) == 0.0);
}

TEST_CASE("hd95 equals the all-pairs brute-force oracle on random 16x16 masks") {
    Rng rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t H = 16, W = 16;
        const auto a = rand_mask(rng, H * W, rng.uniform(0.05, 0.6));
        const auto b = rand_mask(rng, H * W, rng.uniform(0.05, 0.6));
        const double got = hd95(a, b, 1, H, W);
        const double want = hd95_oracle(a, b, 1, H, W);
        CHECK(std::fabs(got - want) < 1e-9);
        CHECK(std::fabs(hd95(b, a, 1, H, W) - got) < 1e-12);  // symmetry
    }
}

TEST_CASE("ece basics") {
    // all confident and correct -> 0
    CHECK(ece(std::vector<double>(10, 1.0), std::vector<std::uint8_t>(10, 1)).ece == 0.0);
    // one bin: acc 0.5, conf 0.8 -> 0.3
    const std::vector<double> conf(10, 0.8);
    std::vector<std::uint8_t> correct(10, 0);
    for (int i = 0; i < 5; ++i) correct[i] = 1;
    CHECK(ece(conf, correct).ece == doctest::Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(ece({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(ece({1.5}, {1}), std::invalid_argument);
}

TEST_CASE("ece equals the flat per-pixel oracle and is permutation invariant") {
    Rng rng(7);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + rng.below(256);
        std::vector<double> conf(n);
        std::vector<std::uint8_t> correct(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf[i] = rng.uniform01();
            correct[i] = rng.uniform01() < conf[i] ? 1 : 0;
        }
        const double got = ece(conf, correct).ece;
        CHECK(std::fabs(got - ece_oracle(conf, correct, 10)) < 1e-12);

        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<double> conf2(n);
        std::vector<std::uint8_t> corr2(n);
        for (std::size_t i = 0; i < n; ++i) {
            conf2[i] = conf[perm[i]];
            corr2[i] = correct[perm[i]];
        }
        CHECK(std::fabs(ece(conf2, corr2).ece - got) < 1e-12);
    }
}

TEST_CASE("ece: adding pixels that match their bin's accuracy and confidence is neutral") {
    // A bin in perfect balance (acc == mean conf) contributes zero; growing it
    // with pixels that preserve that balance leaves ECE unchanged.
    std::vector<double> conf = {0.5, 0.5};
    std::vector<std::uint8_t> correct = {1, 0};
    const double base = ece(conf, correct).ece;
    CHECK(base == 0.0);
    for (int rep = 0; rep < 4; ++rep) {
        conf.push_back(0.5);
        correct.push_back(1);
        conf.push_back(0.5);
        correct.push_back(0);
        CHECK(std::fabs(ece(conf, correct).ece - base) < 1e-15);
    }
}

TEST_CASE("ece reliability table counts every scored pixel exactly once") {
    Rng rng(11);
    std::vector<double> conf(500);
    std::vector<std::uint8_t> correct(500);
    for (std::size_t i = 0; i < conf.size(); ++i) {
        conf[i] = rng.uniform01();
        correct[i] = rng.uniform01() < 0.5;
    }
    const EceResult r = ece(conf, correct);
    std::size_t total = 0;
    for (const ReliabilityBin& b : r.bins) total += b.count;
    CHECK(total == conf.size());
}

TEST_CASE("tace: single class, single range is |acc - conf|") {
    const std::vector<std::vector<double>> conf = {{0.7, 0.9}};
    const std::vector<std::vector<std::uint8_t>> corr = {{1, 0}};
    CHECK(tace(conf, corr, 1e-3, 1) == doctest::Approx(std::fabs(0.5 - 0.8)).epsilon(1e-12));
}

TEST_CASE("tace: confidences below threshold are dropped per class") {
    // class 0 fully below threshold -> excluded; class 1 carries the value
    const std::vector<std::vector<double>> conf = {{1e-5, 1e-6}, {0.6, 0.6}};
    const std::vector<std::vector<std::uint8_t>> corr = {{0, 0}, {1, 1}};
    CHECK(tace(conf, corr, 1e-3, 1) == doctest::Approx(0.4).epsilon(1e-12));
    // everything below threshold is an error
    const std::vector<std::vector<double>> tiny = {{1e-5}, {1e-6}};
    const std::vector<std::vector<std::uint8_t>> c2 = {{0}, {0}};
    CHECK_THROWS_AS(tace(tiny, c2, 1e-3, 1), std::invalid_argument);
}

TEST_CASE("tace approaches zero for perfectly calibrated draws") {
    Rng rng(13);
    const std::size_t N = 100000, K = 3;
    std::vector<std::vector<double>> conf(K);
    std::vector<std::vector<std::uint8_t>> corr(K);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const double c = rng.uniform01();
            conf[k].push_back(c);
            corr[k].push_back(rng.uniform01() < c ? 1 : 0);
        }
    }
    CHECK(tace(conf, corr) < 0.02);
}

TEST_CASE("friedman: a method best everywhere ranks first with rank 1") {
    RankTable t;
    t.methods = {"a", "b", "c"};
    t.settings = {{"s1", true}, {"s2", false}};
    t.values = {{0.9, 1.0}, {0.5, 2.0}, {0.7, 3.0}};
    const FriedmanResult r = friedman_rank(t);
    CHECK(r.rank_f[0] == 1.0);
    CHECK(r.final_rank[0] == 1);
    CHECK(r.order[0] == 0);
}

TEST_CASE("friedman: ties share the average rank") {
    RankTable t;
    t.methods = {"a", "b"};
    t.settings = {{"s1", true}, {"s2", true}};
    t.values = {{0.5, 1.0}, {0.5, 0.0}};
    const FriedmanResult r = friedman_rank(t);
    // s1 is tied: both get 1.5; s2: a first (1), b second (2)
    CHECK(r.rank_f[0] == doctest::Approx((1.5 + 1.0) / 2).epsilon(1e-15));
    CHECK(r.rank_f[1] == doctest::Approx((1.5 + 2.0) / 2).epsilon(1e-15));
}

TEST_CASE("friedman on the published 8-setting table puts CRaC first and NACL second") {
    // DSC(up), HD(down), ECE(down), TACE(down) for two datasets.
    RankTable t;
    t.methods = {"FL", "ECP", "LS", "SVLS", "MbLS", "NACL", "BWCR", "CRaC"};
    t.settings = {{"acdc_dsc", true},  {"acdc_hd", false},  {"acdc_ece", false},
                  {"acdc_tace", false}, {"flare_dsc", true}, {"flare_hd", false},
                  {"flare_ece", false}, {"flare_tace", false}};
    t.values = {
        {0.620, 7.30, 0.153, 0.224, 0.834, 6.65, 0.053, 0.145},
        {0.782, 4.44, 0.130, 0.151, 0.860, 5.30, 0.037, 0.134},
        {0.809, 3.30, 0.083, 0.093, 0.860, 5.33, 0.055, 0.050},
        {0.824, 2.81, 0.091, 0.138, 0.857, 5.72, 0.039, 0.144},
        {0.827, 2.99, 0.103, 0.081, 0.836, 5.75, 0.046, 0.041},
        {0.854, 2.93, 0.068, 0.073, 0.868, 5.12, 0.033, 0.031},
        {0.841, 2.69, 0.051, 0.075, 0.848, 5.39, 0.029, 0.059},
        {0.877, 1.72, 0.057, 0.058, 0.876, 5.52, 0.029, 0.033},
    };
    const FriedmanResult r = friedman_rank(t);
    CHECK(t.methods[r.order[0]] == "CRaC");
    CHECK(t.methods[r.order[1]] == "NACL");
    CHECK(r.final_rank[7] == 1);
    CHECK(r.final_rank[5] == 2);
    // NACL's mean rank is reproduced exactly; FL sits last.
    CHECK(r.rank_f[5] == doctest::Approx(2.25).epsilon(1e-12));
    CHECK(t.methods[r.order.back()] == "FL");
}

TEST_CASE("friedman rejects ragged tables") {
    RankTable t;
    t.methods = {"a", "b"};
    t.settings = {{"s1", true}};
    t.values = {{1.0}, {1.0, 2.0}};
    CHECK_THROWS_AS(friedman_rank(t), std::invalid_argument);
}

TEST_CASE("logit histogram: constant logits occupy a single bin per role") {
    Tensor logits = Tensor::zeros({1, 3, 2, 2});
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t p = 0; p < 4; ++p) logits.data[k * 4 + p] = 1.0 + k;
    const LogitHistograms h = logit_histogram(logits, std::vector<std::uint8_t>(4, 0));
    const auto occupied = [](const Histogram& hist) {
        std::size_t n = 0;
        for (std::size_t c : hist.counts) n += c > 0 ? 1 : 0;
        return n;
    };
    CHECK(occupied(h.winner) == 1);
    CHECK(occupied(h.runner_up) == 1);
    CHECK(occupied(h.true_class) == 1);
    CHECK(h.winner.total() == 4);  // mass equals pixel count
}

TEST_CASE("logit histogram equals a flat counting oracle") {
    Rng rng(17);
    Tensor logits = Tensor::zeros({2, 3, 4, 4});
    for (double& v : logits.data) v = rng.uniform(-25.0, 25.0);  // exercises clamping
    std::vector<std::uint8_t> labels(32);
    for (auto& y : labels) y = static_cast<std::uint8_t>(rng.below(3));
    const LogitHistograms h = logit_histogram(logits, labels, -20.0, 20.0, 40);

    std::vector<std::size_t> winner(40, 0);
    const std::size_t HW = 16;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t p = 0; p < HW; ++p) {
            double top = -1e300;
            for (std::size_t k = 0; k < 3; ++k)
                top = std::max(top, logits.data[(n * 3 + k) * HW + p]);
            const double t = (top + 20.0) / 40.0 * 40.0;
            const std::ptrdiff_t raw = static_cast<std::ptrdiff_t>(std::floor(t));
            winner[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(raw, 0, 39))] += 1;
        }
    CHECK(h.winner.counts == winner);
}

TEST_CASE("report builder: perfect one-hot logits give DSC 1, tiny ECE, HD 0") {
    Rng rng(19);
    const std::size_t K = 3, H = 8, W = 8;
    ReportBuilder builder(K, H, W);
    for (int img = 0; img < 4; ++img) {
        std::vector<std::uint8_t> labels(H * W);
        for (std::size_t p = 0; p < H * W; ++p)
            labels[p] = static_cast<std::uint8_t>(rng.below(K));
        Tensor logits = Tensor::zeros({1, K, H, W});
        for (std::size_t p = 0; p < H * W; ++p)
            for (std::size_t k = 0; k < K; ++k)
                logits.data[k * H * W + p] = labels[p] == k ? 50.0 : 0.0;
        builder.add_batch(logits, labels);
    }
    const MetricsReport r = builder.finish();
    CHECK(r.dsc_mean == 1.0);
    CHECK(r.hd95_mean == 0.0);
    CHECK(r.ece_value < 1e-6);
}

TEST_CASE("metrics CSV round trips through the reader") {
    Rng rng(23);
    const std::size_t K = 3, H = 8, W = 8;
    ReportBuilder builder(K, H, W);
    std::vector<std::uint8_t> labels(H * W);
    for (auto& y : labels) y = static_cast<std::uint8_t>(rng.below(K));
    Tensor logits = Tensor::zeros({1, K, H, W});
    for (double& v : logits.data) v = rng.uniform(-3, 3);
    builder.add_batch(logits, labels);
    const MetricsReport r = builder.finish();

    const auto path = std::string("/tmp/crac_metrics_test.csv");
    write_metrics_csv(r, path);
    const auto rows = read_metrics_csv(path);
    bool found = false;
    for (const auto& [key, value] : rows)
        if (key == "ece/foreground") {
            CHECK(value == doctest::Approx(r.ece_value).epsilon(1e-12));
            found = true;
        }
    CHECK(found);
}
