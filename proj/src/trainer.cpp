#include "crac/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "crac/checkpoint.hpp"
#include "crac/rng.hpp"

namespace crac {

namespace {

constexpr std::uint64_t kShuffleLane = 0x73687566ULL;  // epoch shuffle stream

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

AdamState AdamState::init(const ModelParams& params) {
    AdamState s;
    s.m.reserve(params.values.size());
    s.v.reserve(params.values.size());
    for (const Tensor& t : params.values) {
        s.m.push_back(Tensor::zeros(t.shape));
        s.v.push_back(Tensor::zeros(t.shape));
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& adam,
               double lr) {
    if (params.size() != grads.size() || params.size() != adam.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient lists disagree");
    adam.step += 1;
    const double t = static_cast<double>(adam.step);
    const double bc1 = 1.0 - std::pow(adam.beta1, t);
    const double bc2 = 1.0 - std::pow(adam.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g)) throw std::invalid_argument("adam_step: gradient shape mismatch");
        Tensor& m = adam.m[i];
        Tensor& v = adam.v[i];
        for (std::size_t e = 0; e < p.size(); ++e) {
            const double ge = g.data[e];
            if (!std::isfinite(ge)) throw std::runtime_error("adam_step: non-finite gradient");
            m.data[e] = adam.beta1 * m.data[e] + (1.0 - adam.beta1) * ge;
            v.data[e] = adam.beta2 * v.data[e] + (1.0 - adam.beta2) * ge * ge;
            const double mhat = m.data[e] / bc1;
            const double vhat = v.data[e] / bc2;
            p.data[e] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
        }
    }
}

namespace {

struct LossOutput {
    Value total;
    double total_value = 0.0, ce = 0.0, pin = 0.0, pout = 0.0;
    KrMatrix violation;
    bool has_alm = false;
};

LossOutput compute_loss(Graph& g, const TrainConfig& cfg, Value logits, const BatchData& batch,
                        const SchedulerState* sched) {
    LossOutput out;
    if (cfg.loss == "ce" || cfg.loss == "fl" || cfg.loss == "ls" || cfg.loss == "ecp" ||
        cfg.loss == "mbls") {
        if (cfg.loss == "ce") out.total = cross_entropy(g, logits, batch.labels);
        else if (cfg.loss == "fl") out.total = focal_loss(g, logits, batch.labels, cfg.fl_gamma);
        else if (cfg.loss == "ls")
            out.total = label_smoothing_ce(g, logits, batch.labels, cfg.ls_alpha);
        else if (cfg.loss == "ecp")
            out.total = entropy_penalty_loss(g, logits, batch.labels, cfg.ecp_lambda);
        else
            out.total = margin_logit_loss(g, logits, batch.labels, cfg.mbls_lambda,
                                          cfg.mbls_margin);
        out.total_value = out.total.item();
        out.ce = out.total_value;
        return out;
    }

    LossBreakdown br;
    if (cfg.loss == "nacl") {
        br = nacl_loss(g, logits, batch.labels, batch.tau, cfg.nacl_lambda);
    } else if (cfg.loss == "crac-fixed") {
        KrMatrix w = KrMatrix::constant(batch.num_classes, 0.0);
        for (std::size_t k = 0; k < batch.num_classes; ++k) {
            w.at(k, kRegionInner) = cfg.crac_fixed_lambda_inner;
            w.at(k, kRegionOuter) = cfg.crac_fixed_lambda_outer;
        }
        br = crac_fixed_loss(g, logits, batch.labels, batch.tau, batch.region, w);
    } else if (cfg.loss == "crac") {
        if (!sched) throw std::logic_error("crac loss requires scheduler state");
        br = crac_alm_loss(g, logits, batch.labels, batch.tau, batch.region, sched->lambda,
                           sched->rho, cfg.constraint.signed_violation);
        out.has_alm = true;
    } else {
        throw std::invalid_argument("unknown loss: " + cfg.loss);
    }
    out.total = br.total;
    out.total_value = br.total_value;
    out.ce = br.ce_term;
    out.pin = br.penalty_term_inner;
    out.pout = br.penalty_term_outer;
    out.violation = br.mean_violation;
    return out;
}

void quantize_params(std::vector<Tensor>& values) {
    for (Tensor& t : values)
        for (double& v : t.data) v = quantize_f32(v);
}

void save_training_state(const std::string& path, const ModelParams& params,
                         const AdamState& adam, const SchedulerState* sched,
                         std::size_t epochs_done) {
    TensorStore store;
    save_model(params, store);
    for (std::size_t i = 0; i < params.names.size(); ++i) {
        store.put_tensor("adam.m." + params.names[i], adam.m[i]);
        store.put_tensor("adam.v." + params.names[i], adam.v[i]);
    }
    store.put_scalar("adam.t", static_cast<double>(adam.step));
    store.put_scalar("train.epochs_done", static_cast<double>(epochs_done));
    if (sched) {
        const std::size_t K = sched->lambda.num_classes;
        store.put("alm.lambda", {K, 2}, std::vector<float>(sched->lambda.v.begin(),
                                                           sched->lambda.v.end()));
        store.put("alm.rho", {K, 2}, std::vector<float>(sched->rho.v.begin(),
                                                        sched->rho.v.end()));
        store.put("alm.prev_violation", {K, 2},
                  std::vector<float>(sched->prev_violation.v.begin(),
                                     sched->prev_violation.v.end()));
        store.put_scalar("alm.has_prev", sched->has_prev ? 1.0 : 0.0);
        store.put_scalar("alm.epoch", static_cast<double>(sched->epoch));
    }
    write_store(store, path);
}

KrMatrix matrix_from_store(const TensorStore& store, const std::string& name, std::size_t K) {
    const Tensor t = store.tensor(name);
    if (t.shape != Shape{K, 2})
        throw std::runtime_error("checkpoint entry " + name + " is not K x 2");
    KrMatrix m;
    m.num_classes = K;
    m.v = t.data;
    return m;
}

std::size_t load_training_state(const std::string& path, ModelParams& params, AdamState& adam,
                                SchedulerState* sched) {
    const TensorStore store = read_store(path);
    params = load_model(store);
    adam = AdamState::init(params);
    for (std::size_t i = 0; i < params.names.size(); ++i) {
        adam.m[i] = store.tensor("adam.m." + params.names[i]);
        adam.v[i] = store.tensor("adam.v." + params.names[i]);
        if (!adam.m[i].same_shape(params.values[i]) || !adam.v[i].same_shape(params.values[i]))
            throw std::runtime_error("checkpoint: Adam moment shape mismatch");
    }
    adam.step = static_cast<std::size_t>(store.scalar("adam.t"));
    if (sched) {
        const std::size_t K = params.num_classes;
        sched->lambda = matrix_from_store(store, "alm.lambda", K);
        sched->rho = matrix_from_store(store, "alm.rho", K);
        sched->prev_violation = matrix_from_store(store, "alm.prev_violation", K);
        sched->has_prev = store.scalar("alm.has_prev") != 0.0;
        sched->epoch = static_cast<std::size_t>(store.scalar("alm.epoch"));
        // Clamp after the f32 round trip so loaded state matches the
        // canonicalized in-memory state bit for bit.
        sched->quantize_to_storage();
        sched->validate();
    }
    return static_cast<std::size_t>(store.scalar("train.epochs_done"));
}

}  // namespace

Tensor predict_logits(const ModelParams& params, const std::vector<Sample>& samples,
                      const std::vector<std::size_t>& indices, std::size_t height,
                      std::size_t width) {
    BatchData batch = make_batch(samples, indices, params.num_classes, height, width);
    Graph g;
    const ModelForward fwd = model_forward(g, params, std::move(batch.images));
    return fwd.logits.tensor();
}

TrainResult train(const TrainConfig& config) {
    config.validate();
    const Dataset ds = read_dataset(config.data_path);
    if (ds.train.empty() || ds.val.empty())
        throw std::runtime_error("train: dataset needs non-empty train and val splits");
    if (ds.height % 4 != 0 || ds.width % 4 != 0)
        throw std::runtime_error("train: extents must be divisible by 4 for the model");

    std::filesystem::create_directories(config.out_dir);
    const std::string last_path = config.out_dir + "/last.crck";
    const std::string final_path = config.out_dir + "/final.crck";

    const bool use_alm = config.loss == "crac";
    SchedulerState sched = SchedulerState::init(ds.num_classes, config.sched);

    ModelParams params;
    AdamState adam;
    std::size_t start_epoch = 0;
    if (config.resume.empty()) {
        params = build_model(config.seed, ds.num_classes);
        quantize_params(params.values);  // epoch-0 state is already on the f32 grid
        adam = AdamState::init(params);
    } else {
        start_epoch = load_training_state(config.resume, params, adam, use_alm ? &sched : nullptr);
        if (params.num_classes != ds.num_classes)
            throw std::runtime_error("resume: checkpoint classes do not match the dataset");
        if (start_epoch >= config.epochs)
            throw std::runtime_error("resume: checkpoint already covers the requested epochs");
    }

    TrainResult result;
    const std::size_t half = (config.epochs + 1) / 2;

    for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = epoch < half ? config.lr_first : config.lr_second;

        std::vector<std::size_t> order(ds.train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(config.seed ^ kShuffleLane, epoch);
        shuffle_rng.shuffle(order);

        EpochRecord rec;
        rec.epoch = epoch + 1;
        double weight_sum = 0.0;

        for (std::size_t begin = 0, batch_index = 0; begin < order.size();
             begin += config.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const std::vector<std::size_t> idx(order.begin() + begin, order.begin() + end);
            try {
                BatchData batch = make_batch(ds.train, idx, ds.num_classes, ds.height, ds.width,
                                             config.constraint);
                Graph g;
                const ModelForward fwd = model_forward(g, params, std::move(batch.images));
                const LossOutput loss =
                    compute_loss(g, config, fwd.logits, batch, use_alm ? &sched : nullptr);
                if (!std::isfinite(loss.total_value))
                    throw std::runtime_error("non-finite loss");
                g.backward(loss.total);
                std::vector<Tensor> grads;
                grads.reserve(fwd.params.size());
                for (const Value& p : fwd.params) grads.push_back(g.grad(p));
                adam_step(params.values, grads, adam, lr);

                const double w = static_cast<double>(idx.size());
                rec.train_total += w * loss.total_value;
                rec.train_ce += w * loss.ce;
                rec.train_penalty_inner += w * loss.pin;
                rec.train_penalty_outer += w * loss.pout;
                weight_sum += w;
            } catch (const std::exception& e) {
                throw std::runtime_error("epoch " + std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(batch_index) + ": " + e.what());
            }
        }
        rec.train_total /= weight_sum;
        rec.train_ce /= weight_sum;
        rec.train_penalty_inner /= weight_sum;
        rec.train_penalty_outer /= weight_sum;

        // Validation pass: loss under the epoch's multipliers, plus the
        // constraint statistics that drive the updates.
        ValidationAccumulator accum(ds.num_classes);
        double val_weight = 0.0;
        for (std::size_t begin = 0; begin < ds.val.size(); begin += config.batch_size) {
            const std::size_t end = std::min(ds.val.size(), begin + config.batch_size);
            std::vector<std::size_t> idx(end - begin);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
            BatchData batch =
                make_batch(ds.val, idx, ds.num_classes, ds.height, ds.width, config.constraint);
            Tensor images = batch.images;  // keep targets; graph consumes the tensor
            Graph g;
            const ModelForward fwd = model_forward(g, params, std::move(images));
            const LossOutput loss =
                compute_loss(g, config, fwd.logits, batch, use_alm ? &sched : nullptr);
            const double w = static_cast<double>(idx.size());
            rec.val_total += w * loss.total_value;
            val_weight += w;
            if (use_alm)
                accum.add(constraint_stats(fwd.logits.tensor(), batch.labels, batch.tau,
                                           batch.region, sched.lambda, sched.rho,
                                           config.constraint.signed_violation));
        }
        rec.val_total /= val_weight;

        if (use_alm) {
            const AccumulatedStats acc = accum.finalize();
            // Fixed ordering: multipliers first, then rho, both strictly
            // after the epoch's last gradient step.
            update_multipliers(sched, acc);
            update_rho(sched, acc);
            sched.quantize_to_storage();
            sched.validate();
            rec.has_alm = true;
            rec.lambda = sched.lambda;
            rec.rho = sched.rho;
            rec.mean_violation = acc.mean_violation;
        }

        // Snap persisted state to the f32 checkpoint grid before writing so
        // resuming from this file reproduces the in-memory trajectory.
        quantize_params(params.values);
        quantize_params(adam.m);
        quantize_params(adam.v);
        save_training_state(last_path, params, adam, use_alm ? &sched : nullptr, epoch + 1);
        if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "/epoch_%04zu.crck", epoch + 1);
            save_training_state(config.out_dir + name, params, adam,
                                use_alm ? &sched : nullptr, epoch + 1);
        }
        if (epoch + 1 == config.epochs)
            save_training_state(final_path, params, adam, use_alm ? &sched : nullptr, epoch + 1);

        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(std::move(rec));
    }

    result.params = std::move(params);
    result.final_checkpoint = final_path;
    result.last_checkpoint = last_path;
    result.log_path = config.out_dir + "/train_log.csv";
    write_train_log(result.log, ds.num_classes, result.log_path);
    write_timing_csv(result.log, config.out_dir + "/timing.csv");
    return result;
}

void write_train_log(const std::vector<EpochRecord>& log, std::size_t num_classes,
                     const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    const bool has_alm = !log.empty() && log.front().has_alm;
    os << "epoch,train_total,train_ce,train_penalty_inner,train_penalty_outer,val_total";
    if (has_alm) {
        for (const char* field : {"lambda", "rho", "violation"})
            for (std::size_t k = 0; k < num_classes; ++k)
                for (const char* r : {"inner", "outer"})
                    os << "," << field << "_c" << k << "_" << r;
    }
    os << "\n";
    for (const EpochRecord& rec : log) {
        os << rec.epoch << "," << fmt(rec.train_total) << "," << fmt(rec.train_ce) << ","
           << fmt(rec.train_penalty_inner) << "," << fmt(rec.train_penalty_outer) << ","
           << fmt(rec.val_total);
        if (has_alm) {
            for (const KrMatrix* m : {&rec.lambda, &rec.rho, &rec.mean_violation})
                for (std::size_t k = 0; k < num_classes; ++k)
                    for (std::size_t r = 0; r < 2; ++r) os << "," << fmt(m->at(k, r));
        }
        os << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

void write_timing_csv(const std::vector<EpochRecord>& log, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "epoch,seconds\n";
    for (const EpochRecord& rec : log) os << rec.epoch << "," << fmt(rec.seconds) << "\n";
}

MetricsReport evaluate(const ModelParams& params, const std::vector<Sample>& samples,
                       std::size_t height, std::size_t width, const EvalOptions& opts,
                       std::size_t batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluate: empty split");
    ReportBuilder builder(params.num_classes, height, width, opts);
    for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
        const std::size_t end = std::min(samples.size(), begin + batch_size);
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
        const Tensor logits = predict_logits(params, samples, idx, height, width);
        std::vector<std::uint8_t> labels;
        labels.reserve(idx.size() * height * width);
        for (std::size_t i : idx)
            labels.insert(labels.end(), samples[i].labels.begin(), samples[i].labels.end());
        builder.add_batch(logits, labels);
    }
    return builder.finish();
}

}  // namespace crac
