#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "crac/checks.hpp"
#include "crac/config.hpp"
#include "crac/datagen.hpp"
#include "crac/losses.hpp"
#include "crac/metrics.hpp"
#include "crac/model.hpp"
#include "crac/trainer.hpp"

namespace fs = std::filesystem;
using namespace crac;

namespace {

// Exit code contract: 0 success, 1 runtime failure, 2 usage error.
int parse_or_exit(CLI::App& app, int argc, char** argv, int& code) {
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        code = app.exit(e);
        return 1;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        code = 2;
        return 1;
    }
    return 0;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

int cmd_gen(int argc, char** argv) {
    CLI::App app{"generate a deterministic synthetic segmentation dataset (CRSD)"};
    std::string preset = "toy4", out;
    std::uint64_t seed = 0;
    bool have_seed = false;
    DatasetSpec overrides;
    bool have_classes = false, have_extent = false, have_counts = false;
    std::size_t height = 0, width = 0, train_n = 0, val_n = 0, test_n = 0, classes = 0;
    double noise = -1.0, jitter = -1.0, fraction = -1.0;

    app.add_option("--preset", preset, "dataset preset: toy4 | tiny3")->capture_default_str();
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--seed", seed, "generator seed")->each([&](const std::string&) { have_seed = true; });
    app.add_option("--classes", classes, "class count incl. background")
        ->each([&](const std::string&) { have_classes = true; });
    app.add_option("--height", height)->each([&](const std::string&) { have_extent = true; });
    app.add_option("--width", width)->each([&](const std::string&) { have_extent = true; });
    app.add_option("--train", train_n)->each([&](const std::string&) { have_counts = true; });
    app.add_option("--val", val_n)->each([&](const std::string&) { have_counts = true; });
    app.add_option("--test", test_n)->each([&](const std::string&) { have_counts = true; });
    app.add_option("--noise", noise, "intensity noise sigma");
    app.add_option("--jitter", jitter, "boundary label jitter in pixels");
    app.add_option("--fraction", fraction, "target area fraction per foreground class");

    int code = 0;
    if (parse_or_exit(app, argc, argv, code)) return code;

    DatasetSpec spec = dataset_preset(preset);
    if (have_seed) spec.seed = seed;
    if (have_classes) spec.num_classes = classes;
    if (have_extent) {
        if (height) spec.height = height;
        if (width) spec.width = width;
    }
    if (have_counts) {
        if (train_n) spec.train_count = train_n;
        if (val_n) spec.val_count = val_n;
        if (test_n) spec.test_count = test_n;
    }
    if (noise >= 0.0) spec.noise_sigma = noise;
    if (jitter >= 0.0) spec.boundary_jitter = jitter;
    if (fraction > 0.0) spec.target_fraction = fraction;

    fs::create_directories(out);
    const Dataset ds = generate(spec);
    const std::string path = out + "/dataset.crsd";
    write_dataset(ds, path);
    std::cout << "wrote " << path << " (K=" << ds.num_classes << ", " << ds.height << "x"
              << ds.width << ", splits " << ds.train.size() << "/" << ds.val.size() << "/"
              << ds.test.size() << ")\n";
    return 0;
}

int cmd_train(int argc, char** argv) {
    CLI::App app{"train a segmentation model from a flat key = value config"};
    std::string config_path, out_override, resume;
    app.add_option("--config", config_path, "config file")->required();
    app.add_option("--out", out_override, "override the config's output directory");
    app.add_option("--resume", resume, "checkpoint to resume from");
    int code = 0;
    if (parse_or_exit(app, argc, argv, code)) return code;

    TrainConfig cfg = load_train_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (!resume.empty()) cfg.resume = resume;
    const TrainResult result = train(cfg);
    std::cout << "trained " << result.log.size() << " epoch(s); final checkpoint "
              << result.final_checkpoint << ", log " << result.log_path << "\n";
    return 0;
}

int cmd_eval(int argc, char** argv) {
    CLI::App app{"evaluate a checkpoint on a dataset split"};
    std::string ckpt, data, split = "test", out = ".";
    EvalOptions opts;
    bool hist = false, reliability = false;
    app.add_option("--ckpt", ckpt, "CRCK checkpoint")->required();
    app.add_option("--data", data, "CRSD dataset")->required();
    app.add_option("--split", split, "train | val | test")->capture_default_str();
    app.add_option("--out", out, "output directory")->capture_default_str();
    app.add_option("--ece-bins", opts.ece_bins)->capture_default_str();
    app.add_option("--tace-ranges", opts.tace_ranges)->capture_default_str();
    app.add_option("--tace-threshold", opts.tace_threshold)->capture_default_str();
    app.add_flag("--hist", hist, "also write logit histograms CSV");
    app.add_flag("--reliability", reliability, "also write the reliability table CSV");
    int code = 0;
    if (parse_or_exit(app, argc, argv, code)) return code;

    const TensorStore store = read_store(ckpt);
    const ModelParams params = load_model(store);
    const Dataset ds = read_dataset(data);
    if (params.num_classes != ds.num_classes)
        throw std::runtime_error("checkpoint has " + std::to_string(params.num_classes) +
                                 " classes but the dataset has " +
                                 std::to_string(ds.num_classes));
    const MetricsReport report = evaluate(params, ds.split(split), ds.height, ds.width, opts);

    fs::create_directories(out);
    write_metrics_csv(report, out + "/metrics.csv");
    if (hist) write_histogram_csv(report.histograms, out + "/histograms.csv");
    if (reliability) write_reliability_csv(report, out + "/reliability.csv");
    std::cout << "dsc_mean=" << num(report.dsc_mean) << " hd95_mean=" << num(report.hd95_mean)
              << " ece=" << num(report.ece_value) << " tace=" << num(report.tace_value) << "\n";
    return 0;
}

namespace {

struct SweepRow {
    double lambda;
    MetricsReport report;
};

}  // namespace

int cmd_sweep(int argc, char** argv) {
    CLI::App app{"train/eval across a list of penalty weights (nacl or crac-fixed)"};
    std::string config_path, out;
    std::vector<double> lambdas;
    std::size_t jobs = 1;
    app.add_option("--config", config_path, "base config (loss must be nacl or crac-fixed)")
        ->required();
    app.add_option("--lambda", lambdas, "penalty weights to sweep")->required()->expected(-1);
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--jobs", jobs, "parallel runs")->capture_default_str();
    int code = 0;
    if (parse_or_exit(app, argc, argv, code)) return code;

    if (lambdas.empty()) throw std::runtime_error("sweep: empty lambda list");
    const TrainConfig base = load_train_config(config_path);
    if (base.loss != "nacl" && base.loss != "crac-fixed")
        throw std::runtime_error("sweep: loss must be nacl or crac-fixed, got " + base.loss);
    if (jobs == 0) jobs = 1;

    fs::create_directories(out);
    std::vector<SweepRow> rows(lambdas.size());
    std::mutex err_mutex;
    std::string first_error;

    const auto run_one = [&](std::size_t i) {
        try {
            TrainConfig cfg = base;
            cfg.out_dir = out + "/lambda_" + std::to_string(i);
            if (cfg.loss == "nacl") {
                cfg.nacl_lambda = lambdas[i];
            } else {
                cfg.crac_fixed_lambda_inner = lambdas[i];
                cfg.crac_fixed_lambda_outer = lambdas[i];
            }
            const TrainResult res = train(cfg);
            const Dataset ds = read_dataset(cfg.data_path);
            rows[i] = {lambdas[i], evaluate(res.params, ds.test, ds.height, ds.width)};
        } catch (const std::exception& e) {
            std::scoped_lock lock(err_mutex);
            if (first_error.empty())
                first_error = "lambda " + std::to_string(lambdas[i]) + ": " + e.what();
        }
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < lambdas.size(); ++i) run_one(i);
    } else {
        std::size_t next = 0;
        std::mutex next_mutex;
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(jobs, lambdas.size()); ++t) {
            pool.emplace_back([&] {
                while (true) {
                    std::size_t i;
                    {
                        std::scoped_lock lock(next_mutex);
                        if (next >= lambdas.size()) return;
                        i = next++;
                    }
                    run_one(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    if (!first_error.empty()) throw std::runtime_error(first_error);

    const std::string csv = out + "/sweep.csv";
    std::ofstream os(csv, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + csv);
    os << "lambda,dsc_mean,hd95_mean,ece,tace\n";
    for (const SweepRow& r : rows)
        os << num(r.lambda) << "," << num(r.report.dsc_mean) << "," << num(r.report.hd95_mean)
           << "," << num(r.report.ece_value) << "," << num(r.report.tace_value) << "\n";
    std::cout << "wrote " << csv << " (" << rows.size() << " rows)\n";
    return 0;
}

namespace {

RankTable table_from_value_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error(path + ": empty table");

    RankTable table;
    std::stringstream header(line);
    std::string cell;
    if (!std::getline(header, cell, ',') || cell != "method")
        throw std::runtime_error(path + ": first header cell must be 'method'");
    while (std::getline(header, cell, ',')) {
        const std::size_t colon = cell.rfind(':');
        if (colon == std::string::npos)
            throw std::runtime_error(path + ": setting '" + cell +
                                     "' needs a :higher or :lower suffix");
        const std::string dir = cell.substr(colon + 1);
        if (dir != "higher" && dir != "lower")
            throw std::runtime_error(path + ": setting direction must be higher|lower");
        table.settings.push_back({cell.substr(0, colon), dir == "higher"});
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::getline(row, cell, ',');
        table.methods.push_back(cell);
        std::vector<double> values;
        while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
        if (values.size() != table.settings.size())
            throw std::runtime_error(path + ": row for '" + table.methods.back() +
                                     "' has the wrong column count");
        table.values.push_back(std::move(values));
    }
    return table;
}

RankTable table_from_metric_csvs(const std::vector<std::string>& inputs,
                                 const std::vector<std::string>& names) {
    const std::vector<std::pair<std::string, bool>> wanted = {
        {"dsc/mean", true}, {"hd95/mean", false}, {"ece/foreground", false},
        {"tace/foreground", false}};
    RankTable table;
    for (const auto& [key, higher] : wanted) table.settings.push_back({key, higher});
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto rows = read_metrics_csv(inputs[i]);
        std::vector<double> values;
        for (const auto& [key, higher] : wanted) {
            bool found = false;
            for (const auto& [k, v] : rows)
                if (k == key) {
                    values.push_back(v);
                    found = true;
                    break;
                }
            if (!found)
                throw std::runtime_error(inputs[i] + ": missing metric column " + key +
                                         " (inconsistent inputs)");
        }
        table.methods.push_back(names.empty() ? fs::path(inputs[i]).stem().string() : names[i]);
        table.values.push_back(std::move(values));
    }
    return table;
}

}  // namespace

int cmd_report(int argc, char** argv) {
    CLI::App app{"Friedman rank across methods, from eval CSVs or a raw value table"};
    std::string table_path, out;
    std::vector<std::string> inputs, names, hists;
    app.add_option("--table", table_path,
                   "CSV: method,<setting>:higher,... rows of raw metric values");
    app.add_option("--inputs", inputs, "metrics.csv files from 'crac eval'")->expected(-1);
    app.add_option("--names", names, "method names for --inputs")->expected(-1);
    app.add_option("--hist", hists, "per-method histogram CSVs to collate")->expected(-1);
    app.add_option("--out", out, "output directory")->required();
    int code = 0;
    if (parse_or_exit(app, argc, argv, code)) return code;

    if (table_path.empty() && inputs.empty())
        throw std::runtime_error("report: provide --table or --inputs");
    if (!table_path.empty() && !inputs.empty())
        throw std::runtime_error("report: --table and --inputs are mutually exclusive");
    if (!names.empty() && names.size() != inputs.size())
        throw std::runtime_error("report: --names must match --inputs");

    const RankTable table =
        table_path.empty() ? table_from_metric_csvs(inputs, names) : table_from_value_csv(table_path);
    const FriedmanResult result = friedman_rank(table);

    fs::create_directories(out);
    const std::string rank_path = out + "/rank.csv";
    std::ofstream os(rank_path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + rank_path);
    os << "method,rank_f,final_rank\n";
    for (std::size_t pos = 0; pos < result.order.size(); ++pos) {
        const std::size_t m = result.order[pos];
        os << table.methods[m] << "," << num(result.rank_f[m]) << "," << result.final_rank[m]
           << "\n";
    }
    for (std::size_t i = 0; i < hists.size(); ++i) {
        const std::string name =
            i < names.size() ? names[i] : fs::path(hists[i]).stem().string();
        fs::copy_file(hists[i], out + "/hist_" + name + ".csv",
                      fs::copy_options::overwrite_existing);
    }
    std::cout << "wrote " << rank_path << "; best method: "
              << table.methods[result.order.front()] << "\n";
    return 0;
}

int cmd_check(int argc, char** argv) {
    CLI::App app{"verification suite: penalty axioms, gradient checks, KKT problems"};
    std::string penalty_name = "phr";
    std::size_t samples = 10000, grad_instances = 25;
    app.add_option("--penalty", penalty_name, "penalty to run through the axiom gate");
    app.add_option("--samples", samples, "axiom sample count")->capture_default_str();
    app.add_option("--grad-instances", grad_instances, "random instances per gradient case")
        ->capture_default_str();
    int code = 0;
    if (parse_or_exit(app, argc, argv, code)) return code;

    const auto penalty = make_penalty(penalty_name);
    std::vector<CheckItem> items = axiom_battery(*penalty, samples);
    for (CheckItem& it : gradient_battery(grad_instances)) items.push_back(std::move(it));
    for (CheckItem& it : kkt_battery()) items.push_back(std::move(it));

    print_items(items);
    const bool ok = all_pass(items);
    std::cout << (ok ? "all checks passed\n" : "CHECK FAILURES PRESENT\n");
    return ok ? 0 : 1;
}
