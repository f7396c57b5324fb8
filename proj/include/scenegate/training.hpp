#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "scenegate/common.hpp"
#include "scenegate/data.hpp"
#include "scenegate/metrics.hpp"
#include "scenegate/model.hpp"
#include "scenegate/rng.hpp"

namespace scenegate {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 8;
    std::size_t steps = 300;
    double max_grad_norm = 0.25;
    double warmup_factor = 0.2;
    std::size_t warmup_iterations = 1000;
    std::vector<std::size_t> lr_decay_steps = {14000, 19000};
    double lr_decay_rate = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t eval_every = 50;
    std::size_t checkpoint_every = 100;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size == 0 || steps == 0) throw ConfigError("batch_size and steps must be positive");
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
        if (max_grad_norm <= 0.0) throw ConfigError("max_grad_norm must be positive");
    }
};

inline double grad_global_norm(const std::vector<NamedParam>& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (double g : p.tensor.grad()) sq += g * g;
    }
    return std::sqrt(sq);
}

// Scales every gradient so the global norm is at most max_norm; returns the
// pre-clip norm.
inline double clip_global_norm(std::vector<NamedParam>& params, double max_norm) {
    const double norm = grad_global_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& p : params) {
            if (!p.tensor.has_grad()) continue;
            auto& g = const_cast<std::vector<double>&>(p.tensor.grad());
            for (double& v : g) v *= s;
        }
    }
    return norm;
}

// Adam with linear warmup from warmup_factor to 1 and step decay.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<NamedParam> params, const TrainConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].tensor.numel(), 0.0);
            v_[i].assign(params_[i].tensor.numel(), 0.0);
        }
    }

    double lr_multiplier(std::size_t step) const {
        double mult = 1.0;
        if (cfg_.warmup_iterations > 0 && step <= cfg_.warmup_iterations) {
            const double alpha =
                static_cast<double>(step) / static_cast<double>(cfg_.warmup_iterations);
            mult = cfg_.warmup_factor + (1.0 - cfg_.warmup_factor) * alpha;
        }
        for (std::size_t s : cfg_.lr_decay_steps) {
            if (step > s) mult *= cfg_.lr_decay_rate;
        }
        return mult;
    }

    // One update from the currently accumulated gradients. Gradients are
    // clipped to max_grad_norm first; missing gradients count as zero.
    void step() {
        ++t_;
        last_pre_clip_norm_ = clip_global_norm(params_, cfg_.max_grad_norm);
        const double lr = cfg_.learning_rate * lr_multiplier(t_);
        const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i].tensor;
            auto& w = p.mutable_value();
            const bool has_grad = p.has_grad();
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double g = has_grad ? p.grad()[k] : 0.0;
                m_[i][k] = b1 * m_[i][k] + (1.0 - b1) * g;
                v_[i][k] = b2 * v_[i][k] + (1.0 - b2) * g * g;
                const double mhat = m_[i][k] / bc1;
                const double vhat = v_[i][k] / bc2;
                w[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
            }
        }
    }

    std::size_t iterations() const { return t_; }
    double last_pre_clip_norm() const { return last_pre_clip_norm_; }

private:
    std::vector<NamedParam> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
    double last_pre_clip_norm_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainOutcome {
    double final_loss = 0.0;
    EvalReport train_report;
    EvalReport val_report;
};

inline EvalReport evaluate_model(const SceneGateModel& model,
                                 const std::vector<ModelInput>& inputs,
                                 const std::vector<std::string>& golds) {
    std::vector<std::string> preds;
    preds.reserve(inputs.size());
    for (const ModelInput& in : inputs) preds.push_back(model.decode_answer(in));
    return evaluate_answers(preds, golds);
}

class Trainer {
public:
    Trainer(SceneGateModel& model, const TrainConfig& cfg)
        : model_(model), cfg_(cfg), optimizer_(model.params(), cfg) {
        cfg_.validate();
    }

    // Accumulates per-example gradients of the mean batch loss, clips the
    // global norm and applies one Adam update. Returns the mean loss.
    double train_step(const std::vector<const ModelInput*>& batch, std::size_t global_step) {
        if (batch.empty()) throw ContractError("empty training batch");
        model_.zero_grad();
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        double total = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            Tape tape;
            Dropout dropout{model_.config().stack.dropout,
                            derive_key(derive_key(cfg_.seed, "dropout"),
                                       global_step * 1000003ULL + i),
                            0};
            Tensor loss = model_.loss(tape, *batch[i], &dropout);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                log_error("non-finite loss " + std::to_string(value) + " at step " +
                          std::to_string(global_step) + ", batch member " + std::to_string(i) +
                          ", grad norm so far " + std::to_string(grad_global_norm(model_.params())));
                throw ContractError("non-finite loss at step " + std::to_string(global_step));
            }
            total += value;
            tape.backward(scale(tape, loss, inv_n));
        }
        optimizer_.step();
        return total * inv_n;
    }

    // Full run: deterministic epoch shuffling, per-step CSV metrics rows,
    // periodic checkpoints and evaluation.
    TrainOutcome run(const std::vector<ModelInput>& train_inputs,
                     const std::vector<std::string>& train_golds,
                     const std::vector<ModelInput>& val_inputs,
                     const std::vector<std::string>& val_golds, const std::string& csv_path,
                     const std::string& checkpoint_path, const nlohmann::json& config_json) {
        if (train_inputs.empty()) throw DataError("training set is empty");
        std::ofstream csv;
        if (!csv_path.empty()) {
            csv.open(csv_path);
            if (!csv) throw DataError("cannot open metrics CSV '" + csv_path + "'");
            csv << "step,loss,train_acc,val_acc\n";
        }

        std::vector<std::size_t> order(train_inputs.size());
        std::iota(order.begin(), order.end(), 0);
        std::size_t cursor = 0;
        std::size_t epoch = 0;
        shuffle_epoch(order, epoch);

        std::string train_acc_cell, val_acc_cell;
        TrainOutcome outcome;
        for (std::size_t step = 1; step <= cfg_.steps; ++step) {
            std::vector<const ModelInput*> batch;
            for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
                if (cursor == order.size()) {
                    cursor = 0;
                    shuffle_epoch(order, ++epoch);
                }
                batch.push_back(&train_inputs[order[cursor++]]);
            }
            const double loss = train_step(batch, step);
            outcome.final_loss = loss;

            const bool eval_now =
                step == cfg_.steps || (cfg_.eval_every > 0 && step % cfg_.eval_every == 0);
            if (eval_now) {
                outcome.train_report = evaluate_model(model_, train_inputs, train_golds);
                train_acc_cell = format_double(outcome.train_report.accuracy);
                if (!val_inputs.empty()) {
                    outcome.val_report = evaluate_model(model_, val_inputs, val_golds);
                    val_acc_cell = format_double(outcome.val_report.accuracy);
                }
                log_info("step " + std::to_string(step) + " loss " + format_double(loss) +
                         " train_acc " + train_acc_cell +
                         (val_acc_cell.empty() ? "" : " val_acc " + val_acc_cell));
            }
            if (csv.is_open()) {
                csv << step << "," << format_double(loss) << "," << train_acc_cell << ","
                    << val_acc_cell << "\n";
            }
            const bool ckpt_now =
                !checkpoint_path.empty() &&
                (step == cfg_.steps ||
                 (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0));
            if (ckpt_now) save_checkpoint(model_, config_json, checkpoint_path);
        }
        return outcome;
    }

    const AdamOptimizer& optimizer() const { return optimizer_; }

    static std::string format_double(double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    }

private:
    void shuffle_epoch(std::vector<std::size_t>& order, std::size_t epoch) {
        CounterRng rng(derive_key(derive_key(cfg_.seed, "shuffle"), epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = rng.uniform_index(i);
            std::swap(order[i - 1], order[j]);
        }
    }

    SceneGateModel& model_;
    TrainConfig cfg_;
    AdamOptimizer optimizer_;
};

}  // namespace scenegate
