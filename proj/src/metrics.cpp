#include "crac/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace crac {

double dice(const std::vector<std::uint8_t>& prediction, const std::vector<std::uint8_t>& labels,
            std::uint8_t cls) {
    if (prediction.size() != labels.size())
        throw std::invalid_argument("dice: extent mismatch");
    std::size_t a = 0, b = 0, inter = 0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const bool in_a = prediction[i] == cls;
        const bool in_b = labels[i] == cls;
        a += in_a;
        b += in_b;
        inter += in_a && in_b;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<std::uint8_t> boundary_of(const std::vector<std::uint8_t>& mask, std::size_t H,
                                      std::size_t W, std::uint8_t cls) {
    std::vector<std::uint8_t> out(H * W, 0);
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            if (mask[i * W + j] != cls) continue;
            const bool edge = i == 0 || i + 1 == H || j == 0 || j + 1 == W;
            const bool exposed = edge || mask[(i - 1) * W + j] != cls ||
                                 mask[(i + 1) * W + j] != cls || mask[i * W + j - 1] != cls ||
                                 mask[i * W + j + 1] != cls;
            out[i * W + j] = exposed ? 1 : 0;
        }
    }
    return out;
}

// Empty-feature cells carry a large finite sentinel; infinity would turn the
// envelope intersections into NaNs.
constexpr double kFar = 1e20;

// Felzenszwalb-Huttenlocher exact 1-D squared distance transform.
void dt1d(const std::vector<double>& f, std::vector<double>& d, std::size_t n) {
    static thread_local std::vector<int> v;
    static thread_local std::vector<double> z;
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = 0;
    v[0] = 0;
    z[0] = -kFar;
    z[1] = kFar;
    for (int q = 1; q < static_cast<int>(n); ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kFar;
    }
    k = 0;
    for (int q = 0; q < static_cast<int>(n); ++q) {
        while (z[k + 1] < q) ++k;
        const int p = v[k];
        d[q] = (q - p) * static_cast<double>(q - p) + f[p];
    }
}

// Exact squared Euclidean distance to the nearest feature pixel.
std::vector<double> edt_squared(const std::vector<std::uint8_t>& feature, std::size_t H,
                                std::size_t W) {
    std::vector<double> grid(H * W);
    for (std::size_t i = 0; i < H * W; ++i) grid[i] = feature[i] ? 0.0 : kFar;

    std::vector<double> col_f(H), col_d(H);
    for (std::size_t j = 0; j < W; ++j) {
        for (std::size_t i = 0; i < H; ++i) col_f[i] = grid[i * W + j];
        dt1d(col_f, col_d, H);
        for (std::size_t i = 0; i < H; ++i) grid[i * W + j] = col_d[i];
    }
    std::vector<double> row_d(W);
    for (std::size_t i = 0; i < H; ++i) {
        std::vector<double> row_f(grid.begin() + i * W, grid.begin() + (i + 1) * W);
        dt1d(row_f, row_d, W);
        for (std::size_t j = 0; j < W; ++j) grid[i * W + j] = row_d[j];
    }
    return grid;
}

double percentile_linear(std::vector<double>& values, double p) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n == 1) return values[0];
    const double h = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= n) return values[n - 1];
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

}  // namespace

double hd95(const std::vector<std::uint8_t>& prediction, const std::vector<std::uint8_t>& labels,
            std::uint8_t cls, std::size_t height, std::size_t width) {
    if (prediction.size() != labels.size() || prediction.size() != height * width)
        throw std::invalid_argument("hd95: extent mismatch");
    const bool a_empty = std::none_of(prediction.begin(), prediction.end(),
                                      [&](std::uint8_t v) { return v == cls; });
    const bool b_empty =
        std::none_of(labels.begin(), labels.end(), [&](std::uint8_t v) { return v == cls; });
    if (a_empty && b_empty) return 0.0;
    if (a_empty != b_empty)
        return std::sqrt(static_cast<double>(height * height + width * width));

    const auto ba = boundary_of(prediction, height, width, cls);
    const auto bb = boundary_of(labels, height, width, cls);
    const auto da = edt_squared(ba, height, width);  // distance to boundary of A
    const auto db = edt_squared(bb, height, width);

    std::vector<double> pooled;
    for (std::size_t p = 0; p < ba.size(); ++p) {
        if (ba[p]) pooled.push_back(std::sqrt(db[p]));
        if (bb[p]) pooled.push_back(std::sqrt(da[p]));
    }
    return percentile_linear(pooled, 0.95);
}

EceResult ece(const std::vector<double>& confidence, const std::vector<std::uint8_t>& correct,
              std::size_t bins) {
    if (confidence.size() != correct.size())
        throw std::invalid_argument("ece: confidence/correctness length mismatch");
    if (confidence.empty()) throw std::invalid_argument("ece: no scored samples");
    if (bins == 0) throw std::invalid_argument("ece: bins must be positive");

    EceResult out;
    out.bins.resize(bins);
    std::vector<double> conf_sum(bins, 0.0);
    std::vector<std::size_t> hits(bins, 0), count(bins, 0);
    for (std::size_t i = 0; i < confidence.size(); ++i) {
        const double c = confidence[i];
        if (c < 0.0 || c > 1.0) throw std::invalid_argument("ece: confidence outside [0, 1]");
        // Bins partition (0, 1]; an exact 0 lands in the first bin.
        const std::ptrdiff_t raw =
            static_cast<std::ptrdiff_t>(std::ceil(c * static_cast<double>(bins))) - 1;
        const std::size_t b = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(bins) - 1,
                                     std::max<std::ptrdiff_t>(0, raw)));
        conf_sum[b] += c;
        hits[b] += correct[i] ? 1 : 0;
        count[b] += 1;
    }

    const double n = static_cast<double>(confidence.size());
    for (std::size_t b = 0; b < bins; ++b) {
        ReliabilityBin& rb = out.bins[b];
        rb.lo = static_cast<double>(b) / static_cast<double>(bins);
        rb.hi = static_cast<double>(b + 1) / static_cast<double>(bins);
        rb.count = count[b];
        if (count[b] == 0) continue;
        rb.accuracy = static_cast<double>(hits[b]) / static_cast<double>(count[b]);
        rb.mean_confidence = conf_sum[b] / static_cast<double>(count[b]);
        out.ece += (static_cast<double>(count[b]) / n) * std::fabs(rb.accuracy - rb.mean_confidence);
    }
    return out;
}

double tace(const std::vector<std::vector<double>>& class_confidence,
            const std::vector<std::vector<std::uint8_t>>& class_correct, double threshold,
            std::size_t ranges) {
    if (class_confidence.size() != class_correct.size())
        throw std::invalid_argument("tace: class list mismatch");
    if (threshold <= 0.0 || threshold >= 1.0)
        throw std::invalid_argument("tace: threshold must be in (0, 1)");
    if (ranges == 0) throw std::invalid_argument("tace: ranges must be positive");

    double total = 0.0;
    std::size_t cells = 0;
    bool any_kept = false;
    for (std::size_t k = 0; k < class_confidence.size(); ++k) {
        const auto& conf = class_confidence[k];
        const auto& corr = class_correct[k];
        if (conf.size() != corr.size()) throw std::invalid_argument("tace: length mismatch");

        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < conf.size(); ++i)
            if (conf[i] >= threshold) keep.push_back(i);
        if (keep.empty()) continue;
        any_kept = true;

        std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
            if (conf[a] != conf[b]) return conf[a] < conf[b];
            return a < b;
        });

        const std::size_t m = keep.size();
        for (std::size_t r = 0; r < ranges; ++r) {
            const std::size_t lo = m * r / ranges;
            const std::size_t hi = m * (r + 1) / ranges;
            if (lo >= hi) continue;  // empty cell: contributes zero, reduces divisor
            double csum = 0.0;
            std::size_t hit = 0;
            for (std::size_t t = lo; t < hi; ++t) {
                csum += conf[keep[t]];
                hit += corr[keep[t]] ? 1 : 0;
            }
            const double nc = static_cast<double>(hi - lo);
            total += std::fabs(static_cast<double>(hit) / nc - csum / nc);
            cells += 1;
        }
    }
    if (!any_kept) throw std::invalid_argument("tace: every confidence fell below the threshold");
    return cells == 0 ? 0.0 : total / static_cast<double>(cells);
}

FriedmanResult friedman_rank(const RankTable& table) {
    const std::size_t nm = table.methods.size();
    const std::size_t ns = table.settings.size();
    if (nm == 0 || ns == 0) throw std::invalid_argument("friedman_rank: empty table");
    if (table.values.size() != nm) throw std::invalid_argument("friedman_rank: ragged table");
    for (const auto& row : table.values)
        if (row.size() != ns) throw std::invalid_argument("friedman_rank: ragged table");

    FriedmanResult out;
    out.rank_f.assign(nm, 0.0);

    for (std::size_t s = 0; s < ns; ++s) {
        std::vector<std::size_t> idx(nm);
        std::iota(idx.begin(), idx.end(), 0);
        const bool hb = table.settings[s].higher_better;
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const double va = table.values[a][s], vb = table.values[b][s];
            if (va != vb) return hb ? va > vb : va < vb;
            return a < b;
        });
        // Average-rank convention for ties.
        std::size_t i = 0;
        while (i < nm) {
            std::size_t j = i;
            while (j + 1 < nm && table.values[idx[j + 1]][s] == table.values[idx[i]][s]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t t = i; t <= j; ++t) out.rank_f[idx[t]] += avg;
            i = j + 1;
        }
    }
    for (double& r : out.rank_f) r /= static_cast<double>(ns);

    out.order.resize(nm);
    std::iota(out.order.begin(), out.order.end(), 0);
    std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
        if (out.rank_f[a] != out.rank_f[b]) return out.rank_f[a] < out.rank_f[b];
        return a < b;
    });

    // Final ordinal ranking: ties share the lowest position (1,2,2,4, ...).
    out.final_rank.assign(nm, 0);
    for (std::size_t pos = 0; pos < nm; ++pos) {
        if (pos > 0 && out.rank_f[out.order[pos]] == out.rank_f[out.order[pos - 1]])
            out.final_rank[out.order[pos]] = out.final_rank[out.order[pos - 1]];
        else
            out.final_rank[out.order[pos]] = pos + 1;
    }
    return out;
}

std::size_t Histogram::total() const {
    std::size_t n = 0;
    for (std::size_t c : counts) n += c;
    return n;
}

LogitHistograms logit_histogram(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                                double lo, double hi, std::size_t bins) {
    if (logits.shape.size() != 4) throw std::invalid_argument("logit_histogram: logits rank");
    if (hi <= lo || bins == 0) throw std::invalid_argument("logit_histogram: bad bin spec");
    const std::size_t B = logits.shape[0], K = logits.shape[1];
    const std::size_t HW = logits.shape[2] * logits.shape[3];
    if (labels.size() != B * HW) throw std::invalid_argument("logit_histogram: labels length");

    LogitHistograms out;
    for (Histogram* h : {&out.winner, &out.runner_up, &out.true_class}) {
        h->lo = lo;
        h->hi = hi;
        h->counts.assign(bins, 0);
    }
    const auto put = [&](Histogram& h, double v) {
        const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
        const std::ptrdiff_t raw = static_cast<std::ptrdiff_t>(std::floor(t));
        const std::size_t b = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(bins) - 1, std::max<std::ptrdiff_t>(0, raw)));
        h.counts[b] += 1;
    };

    for (std::size_t n = 0; n < B; ++n) {
        const double* src = logits.data.data() + n * K * HW;
        for (std::size_t p = 0; p < HW; ++p) {
            double top = src[p], second = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 1; k < K; ++k) {
                const double v = src[k * HW + p];
                if (v > top) {
                    second = top;
                    top = v;
                } else {
                    second = std::max(second, v);
                }
            }
            put(out.winner, top);
            if (K > 1) put(out.runner_up, second);
            put(out.true_class, src[labels[n * HW + p] * HW + p]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// split-level report
// ---------------------------------------------------------------------------

ReportBuilder::ReportBuilder(std::size_t num_classes, std::size_t height, std::size_t width,
                             EvalOptions opts)
    : num_classes_(num_classes),
      height_(height),
      width_(width),
      opts_(opts),
      dsc_sum_(num_classes > 0 ? num_classes - 1 : 0, 0.0),
      hd_sum_(num_classes > 0 ? num_classes - 1 : 0, 0.0),
      class_conf_(num_classes),
      class_correct_(num_classes) {
    if (num_classes < 2) throw std::invalid_argument("ReportBuilder: need at least 2 classes");
    for (Histogram* h : {&hist_.winner, &hist_.runner_up, &hist_.true_class}) {
        h->lo = opts_.hist_lo;
        h->hi = opts_.hist_hi;
        h->counts.assign(opts_.hist_bins, 0);
    }
}

void ReportBuilder::add_batch(const Tensor& logits, const std::vector<std::uint8_t>& labels) {
    if (logits.shape.size() != 4 || logits.shape[1] != num_classes_ ||
        logits.shape[2] != height_ || logits.shape[3] != width_)
        throw std::invalid_argument("ReportBuilder: logits shape " + shape_str(logits.shape) +
                                    " does not match the split");
    const std::size_t B = logits.shape[0], K = num_classes_;
    const std::size_t HW = height_ * width_;
    if (labels.size() != B * HW) throw std::invalid_argument("ReportBuilder: labels length");

    const LogitHistograms h = logit_histogram(logits, labels, opts_.hist_lo, opts_.hist_hi,
                                              opts_.hist_bins);
    for (std::size_t b = 0; b < opts_.hist_bins; ++b) {
        hist_.winner.counts[b] += h.winner.counts[b];
        hist_.runner_up.counts[b] += h.runner_up.counts[b];
        hist_.true_class.counts[b] += h.true_class.counts[b];
    }

    std::vector<std::uint8_t> pred(HW);
    std::vector<double> prob(K);
    for (std::size_t n = 0; n < B; ++n) {
        const double* src = logits.data.data() + n * K * HW;
        const std::uint8_t* gt = labels.data() + n * HW;
        for (std::size_t p = 0; p < HW; ++p) {
            double m = src[p];
            std::size_t arg = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (src[k * HW + p] > m) {
                    m = src[k * HW + p];
                    arg = k;
                }
            pred[p] = static_cast<std::uint8_t>(arg);

            double denom = 0.0;
            for (std::size_t k = 0; k < K; ++k) denom += std::exp(src[k * HW + p] - m);
            for (std::size_t k = 0; k < K; ++k) prob[k] = std::exp(src[k * HW + p] - m) / denom;

            if (gt[p] > 0) {  // calibration is scored on foreground ground truth
                conf_.push_back(prob[arg]);
                correct_.push_back(pred[p] == gt[p] ? 1 : 0);
                for (std::size_t k = 0; k < K; ++k) {
                    class_conf_[k].push_back(prob[k]);
                    class_correct_[k].push_back(gt[p] == k ? 1 : 0);
                }
            }
        }
        const std::vector<std::uint8_t> gt_img(gt, gt + HW);
        for (std::size_t k = 1; k < K; ++k) {
            dsc_sum_[k - 1] += dice(pred, gt_img, static_cast<std::uint8_t>(k));
            hd_sum_[k - 1] += hd95(pred, gt_img, static_cast<std::uint8_t>(k), height_, width_);
        }
        images_ += 1;
    }
}

MetricsReport ReportBuilder::finish() const {
    if (images_ == 0) throw std::runtime_error("ReportBuilder: no images scored");
    MetricsReport r;
    r.num_classes = num_classes_;
    r.images = images_;
    const double n = static_cast<double>(images_);
    for (std::size_t k = 0; k + 1 < num_classes_; ++k) {
        r.dsc_per_class.push_back(dsc_sum_[k] / n);
        r.hd95_per_class.push_back(hd_sum_[k] / n);
        r.dsc_mean += dsc_sum_[k] / n;
        r.hd95_mean += hd_sum_[k] / n;
    }
    r.dsc_mean /= static_cast<double>(num_classes_ - 1);
    r.hd95_mean /= static_cast<double>(num_classes_ - 1);

    const EceResult e = ece(conf_, correct_, opts_.ece_bins);
    r.ece_value = e.ece;
    r.reliability = e.bins;
    r.tace_value = tace(class_conf_, class_correct_, opts_.tace_threshold, opts_.tace_ranges);
    r.histograms = hist_;
    return r;
}

// ---------------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    return os;
}

}  // namespace

void write_metrics_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream os = open_out(path);
    os << "metric,scope,value\n";
    for (std::size_t k = 0; k < report.dsc_per_class.size(); ++k)
        os << "dsc,class_" << (k + 1) << "," << num(report.dsc_per_class[k]) << "\n";
    os << "dsc,mean," << num(report.dsc_mean) << "\n";
    for (std::size_t k = 0; k < report.hd95_per_class.size(); ++k)
        os << "hd95,class_" << (k + 1) << "," << num(report.hd95_per_class[k]) << "\n";
    os << "hd95,mean," << num(report.hd95_mean) << "\n";
    os << "ece,foreground," << num(report.ece_value) << "\n";
    os << "tace,foreground," << num(report.tace_value) << "\n";
    os << "images,count," << report.images << "\n";
    if (!os) throw std::runtime_error("write failed: " + path);
}

void write_reliability_csv(const MetricsReport& report, const std::string& path) {
    std::ofstream os = open_out(path);
    os << "bin_lo,bin_hi,count,accuracy,mean_confidence\n";
    for (const ReliabilityBin& b : report.reliability)
        os << num(b.lo) << "," << num(b.hi) << "," << b.count << "," << num(b.accuracy) << ","
           << num(b.mean_confidence) << "\n";
    if (!os) throw std::runtime_error("write failed: " + path);
}

void write_histogram_csv(const LogitHistograms& hist, const std::string& path) {
    std::ofstream os = open_out(path);
    os << "role,bin_lo,bin_hi,count\n";
    const auto emit = [&](const char* role, const Histogram& h) {
        const double width = (h.hi - h.lo) / static_cast<double>(h.counts.size());
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            os << role << "," << num(h.lo + width * static_cast<double>(b)) << ","
               << num(h.lo + width * static_cast<double>(b + 1)) << "," << h.counts[b] << "\n";
    };
    emit("winner", hist.winner);
    emit("runner_up", hist.runner_up);
    emit("true_class", hist.true_class);
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::string, double>> read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "metric,scope,value")
        throw std::runtime_error(path + ": not a metrics CSV (bad header)");
    std::vector<std::pair<std::string, double>> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw std::runtime_error(path + ": malformed metrics row: " + line);
        out.emplace_back(line.substr(0, c1) + "/" + line.substr(c1 + 1, c2 - c1 - 1),
                         std::stod(line.substr(c2 + 1)));
    }
    return out;
}

}  // namespace crac
