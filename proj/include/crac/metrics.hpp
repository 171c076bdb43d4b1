#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crac/tensor.hpp"

namespace crac {

// 2|A n B| / (|A| + |B|) for the class-k masks; 1 when both masks are empty.
double dice(const std::vector<std::uint8_t>& prediction, const std::vector<std::uint8_t>& labels,
            std::uint8_t cls);

// 95th percentile (linear interpolation between order statistics) of the
// pooled symmetric boundary-to-boundary nearest distances. Boundary pixels
// are mask pixels with a 4-neighbour outside the mask (the outside of the
// image counts as background). Both masks empty -> 0; exactly one empty ->
// the image diagonal. Computed via an exact Euclidean distance transform.
double hd95(const std::vector<std::uint8_t>& prediction, const std::vector<std::uint8_t>& labels,
            std::uint8_t cls, std::size_t height, std::size_t width);

struct ReliabilityBin {
    double lo = 0.0, hi = 0.0;
    std::size_t count = 0;
    double accuracy = 0.0;
    double mean_confidence = 0.0;
};

struct EceResult {
    double ece = 0.0;
    std::vector<ReliabilityBin> bins;
};

// Equal-width bins over (0, 1]; confidence 0 falls into the first bin.
EceResult ece(const std::vector<double>& confidence, const std::vector<std::uint8_t>& correct,
              std::size_t bins = 10);

// Thresholded adaptive calibration error: per class, confidences below the
// threshold are dropped and the rest are split into `ranges` equal-mass
// groups; the result averages |acc - conf| over non-empty cells (empty cells
// reduce the divisor). Throws when every confidence is below the threshold.
double tace(const std::vector<std::vector<double>>& class_confidence,
            const std::vector<std::vector<std::uint8_t>>& class_correct, double threshold = 1e-3,
            std::size_t ranges = 15);

struct RankSetting {
    std::string name;
    bool higher_better = true;
};

struct RankTable {
    std::vector<std::string> methods;
    std::vector<RankSetting> settings;
    std::vector<std::vector<double>> values;  // methods x settings
};

struct FriedmanResult {
    std::vector<double> rank_f;            // mean per-setting rank (ties averaged)
    std::vector<std::size_t> final_rank;   // ordinal by ascending rank_f
    std::vector<std::size_t> order;        // method indices sorted by rank_f
};

FriedmanResult friedman_rank(const RankTable& table);

struct Histogram {
    double lo = 0.0, hi = 0.0;
    std::vector<std::size_t> counts;

    std::size_t total() const;
};

// Fixed-width histograms of the winner, runner-up and true-class logits over
// all pixels; out-of-range values clamp into the edge bins.
struct LogitHistograms {
    Histogram winner, runner_up, true_class;
};

LogitHistograms logit_histogram(const Tensor& logits, const std::vector<std::uint8_t>& labels,
                                double lo = -20.0, double hi = 20.0, std::size_t bins = 100);

struct EvalOptions {
    std::size_t ece_bins = 10;
    std::size_t tace_ranges = 15;
    double tace_threshold = 1e-3;
    double hist_lo = -20.0, hist_hi = 20.0;
    std::size_t hist_bins = 100;
};

struct MetricsReport {
    std::size_t num_classes = 0;
    std::size_t images = 0;
    std::vector<double> dsc_per_class;   // foreground classes 1..K-1
    std::vector<double> hd95_per_class;  // same order
    double dsc_mean = 0.0;
    double hd95_mean = 0.0;
    double ece_value = 0.0;
    double tace_value = 0.0;
    std::vector<ReliabilityBin> reliability;
    LogitHistograms histograms;
};

// Streams per-batch logits into a split-level report. Predictions are the
// channel argmax (ties to the lowest class index); confidence is the max
// softmax probability; ECE/TACE score pixels whose ground truth is a
// foreground class; DSC/HD95 average per-image values.
class ReportBuilder {
public:
    ReportBuilder(std::size_t num_classes, std::size_t height, std::size_t width,
                  EvalOptions opts = {});
    void add_batch(const Tensor& logits, const std::vector<std::uint8_t>& labels);
    MetricsReport finish() const;

private:
    std::size_t num_classes_, height_, width_;
    EvalOptions opts_;
    std::size_t images_ = 0;
    std::vector<double> dsc_sum_, hd_sum_;
    std::vector<double> conf_;
    std::vector<std::uint8_t> correct_;
    std::vector<std::vector<double>> class_conf_;
    std::vector<std::vector<std::uint8_t>> class_correct_;
    LogitHistograms hist_;
};

void write_metrics_csv(const MetricsReport& report, const std::string& path);
void write_reliability_csv(const MetricsReport& report, const std::string& path);
void write_histogram_csv(const LogitHistograms& hist, const std::string& path);

// Parses a metric summary CSV back into (metric, scope) -> value pairs.
std::vector<std::pair<std::string, double>> read_metrics_csv(const std::string& path);

}  // namespace crac
