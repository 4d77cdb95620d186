#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lvit/checkpoint.hpp"
#include "lvit/config.hpp"
#include "lvit/data.hpp"
#include "lvit/errors.hpp"
#include "lvit/model.hpp"
#include "lvit/rng.hpp"
#include "lvit/tape.hpp"

namespace lvit {

struct TrainConfig {
    double lr0 = 0.001;
    double decay_gamma = 0.97;
    std::size_t epochs = 80;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::string warm_start;  // checkpoint path, empty = cold start

    void validate() const {
        if (lr0 <= 0.0) throw ValueError("lr0 must be positive");
        if (decay_gamma <= 0.0 || decay_gamma > 1.0) {
            throw ValueError("decay_gamma must be in (0,1]");
        }
        if (epochs == 0) throw ValueError("epochs must be at least 1");
        if (batch_size == 0) throw ValueError("batch_size must be at least 1");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
            throw ValueError("adam betas must be in [0,1)");
        }
        if (adam_eps <= 0.0) throw ValueError("adam_eps must be positive");
    }
};

inline KvMap train_config_to_kv(const TrainConfig& cfg) {
    KvMap kv;
    kv["train.lr0"] = format_double(cfg.lr0);
    kv["train.decay_gamma"] = format_double(cfg.decay_gamma);
    kv["train.epochs"] = std::to_string(cfg.epochs);
    kv["train.batch_size"] = std::to_string(cfg.batch_size);
    kv["train.seed"] = std::to_string(cfg.seed);
    kv["train.beta1"] = format_double(cfg.beta1);
    kv["train.beta2"] = format_double(cfg.beta2);
    kv["train.adam_eps"] = format_double(cfg.adam_eps);
    if (!cfg.warm_start.empty()) kv["train.warm_start"] = cfg.warm_start;
    return kv;
}

inline TrainConfig train_config_from_kv(const KvMap& kv) {
    TrainConfig cfg;
    cfg.lr0 = kv_f64(kv, "train.lr0", cfg.lr0);
    cfg.decay_gamma = kv_f64(kv, "train.decay_gamma", cfg.decay_gamma);
    cfg.epochs = kv_u64(kv, "train.epochs", cfg.epochs);
    cfg.batch_size = kv_u64(kv, "train.batch_size", cfg.batch_size);
    cfg.seed = kv_u64(kv, "train.seed", cfg.seed);
    cfg.beta1 = kv_f64(kv, "train.beta1", cfg.beta1);
    cfg.beta2 = kv_f64(kv, "train.beta2", cfg.beta2);
    cfg.adam_eps = kv_f64(kv, "train.adam_eps", cfg.adam_eps);
    if (auto v = kv_get(kv, "train.warm_start")) cfg.warm_start = *v;
    return cfg;
}

/// Per-epoch schedule: lr0 * decay_gamma^epoch.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(cfg.decay_gamma, static_cast<double>(epoch));
}

/// First/second moment buffers, one pair per parameter, plus the shared step
/// counter.
struct AdamState {
    struct Slot {
        Tensor m;
        Tensor v;
    };
    std::vector<Slot> slots;
    std::uint64_t t = 0;

    explicit AdamState(const std::vector<Parameter*>& params) {
        slots.reserve(params.size());
        for (const Parameter* p : params) slots.push_back({Tensor(p->value.shape), Tensor(p->value.shape)});
    }
};

/// One standard Adam update with bias correction. Gradients are read, not
/// cleared — the caller zeroes them.
inline void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr,
                      const TrainConfig& cfg) {
    if (state.slots.size() != params.size()) {
        throw ContractError("optimizer state tracks " + std::to_string(state.slots.size()) +
                            " parameters, got " + std::to_string(params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        AdamState::Slot& s = state.slots[i];
        if (!s.m.same_shape(p.value) || !p.grad.same_shape(p.value)) {
            throw ContractError("optimizer state shape drift at parameter " + p.name);
        }
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad.data[j];
            s.m.data[j] = cfg.beta1 * s.m.data[j] + (1.0 - cfg.beta1) * g;
            s.v.data[j] = cfg.beta2 * s.v.data[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = s.m.data[j] / bc1;
            const double vhat = s.v.data[j] / bc2;
            p.value.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

struct EpochReport {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochReport&)>;

/// The training loop: per epoch, a seed^epoch shuffled batch pass (partial
/// final batch kept) of forward / cross-entropy / backward / Adam with
/// lr_at(epoch), then an eval-mode accuracy sweep. Dropout draws come from a
/// stream derived from the seed, so a (seed, config, data) triple fixes the
/// whole run. mean_loss weights batch losses by batch size.
inline std::vector<EpochReport> fit(ModelParams& mp, const Dataset& data, const TrainConfig& cfg,
                                    const EpochCallback& callback = {}) {
    cfg.validate();
    if (data.samples.empty()) throw ContractError("fit on empty dataset");
    const ModelConfig& model_cfg = mp.config();
    for (const Sample& s : data.samples) {
        if (s.label >= model_cfg.num_classes) {
            throw ContractError("sample " + s.source_id + " has label " +
                                std::to_string(s.label) + ", model has " +
                                std::to_string(model_cfg.num_classes) + " classes");
        }
    }
    if (!cfg.warm_start.empty()) load_into(mp, cfg.warm_start);

    const std::size_t n = data.samples.size();
    std::vector<Tensor> patches;
    patches.reserve(n);
    for (const Sample& s : data.samples) patches.push_back(patchify(s.image, model_cfg));

    AdamState state(mp.all());
    Rng dropout_rng(Rng::derive(cfg.seed, 1));
    zero_grads(mp.all());

    std::vector<EpochReport> reports;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg);
        Rng shuffle_rng(cfg.seed ^ static_cast<std::uint64_t>(epoch));
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (const auto& batch : batches(n, cfg.batch_size, shuffle_rng)) {
            Tape tape;
            std::vector<Tensor> rows;
            std::vector<std::size_t> labels;
            rows.reserve(batch.size());
            for (const std::size_t i : batch) {
                rows.push_back(forward_patches(tape, mp, patches[i], true, dropout_rng));
                labels.push_back(data.samples[i].label);
            }
            Tensor loss = tape.cross_entropy(tape.concat(rows, 0), labels);
            const double loss_val = loss.data[0];
            if (!std::isfinite(loss_val)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_no));
            }
            tape.backward(loss);
            adam_step(mp.all(), state, lr, cfg);
            zero_grads(mp.all());
            loss_sum += loss_val * static_cast<double>(batch.size());
            ++batch_no;
        }

        std::size_t correct = 0;
        Rng eval_rng(0);
        for (std::size_t i = 0; i < n; ++i) {
            Tape tape;
            Tensor row = forward_patches(tape, mp, patches[i], false, eval_rng);
            if (predict(row) == data.samples[i].label) ++correct;
        }

        EpochReport report;
        report.epoch = epoch;
        report.mean_loss = loss_sum / static_cast<double>(n);
        report.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
        report.lr = lr;
        report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        reports.push_back(report);
        if (callback) callback(report);
    }
    return reports;
}

}  // namespace lvit
