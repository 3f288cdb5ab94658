#include "sleepscore/train.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace sleepscore {

void validate(const TrainPlan& plan) {
    if (plan.pretrain_passes < 1 || plan.finetune_passes < 1 || plan.pretrain_batch < 2 ||
        plan.finetune_batch < 1 || plan.seq_len < 1) {
        throw std::invalid_argument("train plan: counts and lengths must be positive "
                                    "(pre-training batches need at least 2 epochs)");
    }
    if (plan.lr_pretrain <= 0.0 || plan.lr_rest <= 0.0 || plan.lr_cnn < 0.0 ||
        plan.clip_threshold <= 0.0 || plan.weight_decay < 0.0) {
        throw std::invalid_argument("train plan: rates and thresholds must be positive");
    }
    if (plan.lr_cnn > plan.lr_rest) {
        throw std::invalid_argument("train plan: the branch rate must not exceed the "
                                    "sequence rate");
    }
}

Adam::Adam(std::vector<ParamGroup> groups, double beta1, double beta2, double epsilon)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    m_.resize(groups_.size());
    v_.resize(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        m_[g].resize(groups_[g].params.size());
        v_[g].resize(groups_[g].params.size());
        for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
            const auto n = static_cast<std::size_t>(groups_[g].params[p].second.size());
            m_[g][p].assign(n, 0.0);
            v_[g][p].assign(n, 0.0);
        }
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        const double lr = groups_[g].lr;
        for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
            auto& [name, tensor] = groups_[g].params[p];
            const std::span<const double> grad = std::as_const(tensor).grad();
            const std::span<double> vals = tensor.values();
            auto& m = m_[g][p];
            auto& v = v_[g][p];
            for (std::size_t i = 0; i < m.size(); ++i) {
                const double gi = grad[i];
                if (std::isnan(gi)) {
                    throw std::runtime_error("adam: NaN gradient in parameter '" + name +
                                             "' at element " + std::to_string(i));
                }
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                vals[i] -= lr * mhat / (std::sqrt(vhat) + epsilon_);
            }
        }
    }
}

void Adam::zero_grads() {
    for (auto& group : groups_) {
        for (auto& [name, tensor] : group.params) {
            tensor.zero_grad();
        }
    }
}

double global_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params) {
    double sum_sq = 0.0;
    for (const auto& [name, tensor] : params) {
        for (const double g : std::as_const(tensor).grad()) {
            sum_sq += g * g;
        }
    }
    return std::sqrt(sum_sq);
}

double clip_global_norm(const std::vector<std::pair<std::string, Tensor>>& params,
                        double threshold) {
    if (threshold <= 0.0) {
        throw std::invalid_argument("clip_global_norm: threshold must be positive");
    }
    const double norm = global_grad_norm(params);
    if (norm > threshold) {
        const double factor = threshold / norm;
        for (const auto& [name, tensor] : params) {
            Tensor t = tensor;
            for (double& g : t.grad()) {
                g *= factor;
            }
        }
    }
    return norm;
}

Tensor l2_penalty(const std::vector<Tensor>& weights, double lambda) {
    Tensor total = Tensor::scalar(0.0);
    for (const Tensor& w : weights) {
        total = add(total, sum(mul(w, w)));
    }
    return scale(total, lambda);
}

std::string step_log_header() {
    return "phase,pass,step,loss,grad_norm,lr_cnn,lr_rest,batch_accuracy";
}

std::string step_log_line(const StepLog& log) {
    char buf[192];
    std::snprintf(buf, sizeof(buf), "%s,%lld,%lld,%.8g,%.8g,%.3g,%.3g,%.4f",
                  log.phase.c_str(), static_cast<long long>(log.pass),
                  static_cast<long long>(log.step), log.loss, log.grad_norm, log.lr_cnn,
                  log.lr_rest, log.batch_accuracy);
    return buf;
}

NamedArrays extract_cnn(SleepStageNet& model) {
    NamedArrays out;
    for (auto& [name, tensor] : named_params(model)) {
        if (is_cnn_param(name)) {
            const auto vals = std::as_const(tensor).values();
            out.emplace_back(name, std::vector<double>(vals.begin(), vals.end()));
        }
    }
    for (auto& [name, stats] : named_stats(model)) {
        if (is_cnn_param(name)) {
            out.emplace_back(name, *stats);
        }
    }
    return out;
}

void replace_cnns(SleepStageNet& model, const NamedArrays& arrays) {
    std::vector<std::pair<std::string, std::span<double>>> targets;
    for (auto& [name, tensor] : named_params(model)) {
        if (is_cnn_param(name)) {
            targets.emplace_back(name, tensor.values());
        }
    }
    for (auto& [name, stats] : named_stats(model)) {
        if (is_cnn_param(name)) {
            targets.emplace_back(name, std::span<double>(*stats));
        }
    }
    if (arrays.size() != targets.size()) {
        throw std::invalid_argument("replace_cnns: " + std::to_string(arrays.size()) +
                                    " arrays for " + std::to_string(targets.size()) +
                                    " branch parameters");
    }
    for (const auto& [name, values] : arrays) {
        auto it = std::find_if(targets.begin(), targets.end(),
                               [&](const auto& t) { return t.first == name; });
        if (it == targets.end()) {
            throw std::invalid_argument("replace_cnns: unknown parameter '" + name + "'");
        }
        if (it->second.size() != values.size()) {
            throw std::invalid_argument(
                "replace_cnns: parameter '" + name + "' has " +
                std::to_string(values.size()) + " values, the model expects " +
                std::to_string(it->second.size()));
        }
        std::copy(values.begin(), values.end(), it->second.begin());
    }
}

std::pair<std::vector<std::pair<std::string, Tensor>>,
          std::vector<std::pair<std::string, Tensor>>>
partition_params(SleepStageNet& model) {
    std::vector<std::pair<std::string, Tensor>> cnn, rest;
    for (auto& entry : named_params(model)) {
        (is_cnn_param(entry.first) ? cnn : rest).push_back(entry);
    }
    return {std::move(cnn), std::move(rest)};
}

namespace {

double batch_accuracy(const Tensor& logits, const std::vector<std::int64_t>& targets) {
    const auto vals = logits.values();
    const std::int64_t classes = logits.dim(1);
    std::int64_t hits = 0;
    for (std::size_t b = 0; b < targets.size(); ++b) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < classes; ++c) {
            if (vals[b * static_cast<std::size_t>(classes) + static_cast<std::size_t>(c)] >
                vals[b * static_cast<std::size_t>(classes) + static_cast<std::size_t>(best)]) {
                best = c;
            }
        }
        if (best == targets[b]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(targets.size());
}

}  // namespace

PretrainResult pretrain(SleepStageNet& model,
                        const std::vector<const EpochRecord*>& balanced,
                        const TrainPlan& plan, Rng& rng, const StepHook& hook) {
    validate(plan);
    if (balanced.empty()) {
        throw std::invalid_argument("pretrain: empty training set");
    }
    std::array<std::int64_t, kNumStages> counts{};
    for (const auto* e : balanced) {
        counts[static_cast<std::size_t>(e->label)]++;
    }
    for (int c = 1; c < kNumStages; ++c) {
        if (counts[static_cast<std::size_t>(c)] != counts[0]) {
            throw std::invalid_argument(
                "pretrain: class counts are not balanced (" + stage_name(Stage::Wake) +
                "=" + std::to_string(counts[0]) + ", " +
                stage_name(static_cast<Stage>(c)) + "=" +
                std::to_string(counts[static_cast<std::size_t>(c)]) + ")");
        }
    }

    const double head_bound = 1.0 / std::sqrt(static_cast<double>(model.feature_width));
    Tensor head_w = Tensor::uniform({model.feature_width, model.config.n_classes},
                                    -head_bound, head_bound, rng, true);
    Tensor head_b = Tensor::zeros({model.config.n_classes}, true);

    auto [cnn, rest] = partition_params(model);
    std::vector<std::pair<std::string, Tensor>> trained = cnn;
    trained.emplace_back("pretrain.head.w", head_w);
    trained.emplace_back("pretrain.head.b", head_b);
    Adam opt({ParamGroup{trained, plan.lr_pretrain}});
    const std::vector<Tensor> decay = decay_params(model);

    std::vector<std::size_t> order(balanced.size());
    std::iota(order.begin(), order.end(), 0);

    PretrainResult result;
    for (std::int64_t pass = 1; pass <= plan.pretrain_passes; ++pass) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(plan.pretrain_batch)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(plan.pretrain_batch));
            if (stop - start < 2) {
                continue;  // batch-norm needs at least two rows
            }
            std::vector<const EpochRecord*> batch;
            std::vector<std::int64_t> targets;
            for (std::size_t i = start; i < stop; ++i) {
                batch.push_back(balanced[order[i]]);
                targets.push_back(static_cast<std::int64_t>(balanced[order[i]]->label));
            }
            const Tensor x = epochs_to_tensor(batch, model.config.fs);
            const Tensor feats = featurize(model, x, Mode::Train, rng);
            const Tensor logits = add_rowvec(matmul(feats, head_w), head_b);
            const Tensor loss =
                add(softmax_cross_entropy(logits, targets), l2_penalty(decay, plan.weight_decay));
            backward(loss);
            const double norm = global_grad_norm(trained);
            opt.step();
            opt.zero_grads();
            ++result.steps;
            result.final_loss = loss.values()[0];
            if (pass == 1) {
                result.first_pass_loss = result.final_loss;
            }
            if (hook) {
                hook(StepLog{"pretrain", pass, result.steps, result.final_loss, norm,
                             plan.lr_pretrain, plan.lr_pretrain,
                             batch_accuracy(logits, targets)});
            }
        }
    }
    result.cnn = extract_cnn(model);
    return result;
}

FinetuneResult finetune(SleepStageNet& model, const NamedArrays& pretrained_cnn,
                        const std::vector<const SubjectRecording*>& subjects,
                        const TrainPlan& plan, Rng& rng, const StepHook& hook,
                        const ResetHook& on_reset) {
    validate(plan);
    if (subjects.empty()) {
        throw std::invalid_argument("finetune: no training subjects");
    }
    replace_cnns(model, pretrained_cnn);

    auto [cnn, rest] = partition_params(model);
    std::vector<std::pair<std::string, Tensor>> all = cnn;
    all.insert(all.end(), rest.begin(), rest.end());
    Adam opt({ParamGroup{cnn, plan.lr_cnn}, ParamGroup{rest, plan.lr_rest}});
    const std::vector<Tensor> decay = decay_params(model);

    std::vector<std::size_t> order(subjects.size());
    std::iota(order.begin(), order.end(), 0);

    FinetuneResult result;
    for (std::int64_t pass = 1; pass <= plan.finetune_passes; ++pass) {
        rng.shuffle(order);
        for (const std::size_t si : order) {
            const SubjectRecording& subject = *subjects[si];
            if (subject.fs != model.config.fs) {
                throw std::invalid_argument("finetune: subject " + subject.subject_id +
                                            " sampled at " + std::to_string(subject.fs) +
                                            " Hz, the model expects " +
                                            std::to_string(model.config.fs));
            }
            const auto steps = arrange_sequences(
                static_cast<std::int64_t>(subject.epochs.size()), plan.finetune_batch,
                plan.seq_len);
            std::vector<std::int64_t> active = steps.front().lane_ids;
            reset_states(model, static_cast<std::int64_t>(active.size()));
            ++result.state_resets;
            if (on_reset) {
                on_reset(subject.subject_id);
            }
            for (const auto& step : steps) {
                if (step.lane_ids != active) {
                    std::vector<std::int64_t> rows;
                    for (const auto lane : step.lane_ids) {
                        const auto it = std::find(active.begin(), active.end(), lane);
                        rows.push_back(it - active.begin());
                    }
                    select_state_lanes(model, rows);
                    active = step.lane_ids;
                }
                const auto lanes = static_cast<std::int64_t>(step.lane_ids.size());
                // time-major rows: all lanes at t=0, then t=1, ...
                std::vector<const EpochRecord*> batch;
                std::vector<std::int64_t> targets;
                for (std::int64_t t = 0; t < step.step_len; ++t) {
                    for (std::int64_t l = 0; l < lanes; ++l) {
                        const auto& epoch = subject.epochs[static_cast<std::size_t>(
                            step.epoch_indices[static_cast<std::size_t>(l * step.step_len + t)])];
                        batch.push_back(&epoch);
                        targets.push_back(static_cast<std::int64_t>(epoch.label));
                    }
                }
                const Tensor x = epochs_to_tensor(batch, model.config.fs);
                const Tensor feats = featurize(model, x, Mode::Train, rng);
                std::vector<Tensor> per_step;
                for (std::int64_t t = 0; t < step.step_len; ++t) {
                    per_step.push_back(slice_rows(feats, t * lanes, lanes));
                }
                const std::vector<Tensor> logit_steps =
                    sequence_pass(model, per_step, Mode::Train, rng);
                const Tensor logits = concat(logit_steps, 0);
                const Tensor loss = add(softmax_cross_entropy(logits, targets),
                                        l2_penalty(decay, plan.weight_decay));
                backward(loss);
                const double norm = clip_global_norm(all, plan.clip_threshold);
                opt.step();
                opt.zero_grads();
                ++result.steps;
                result.final_loss = loss.values()[0];
                if (hook) {
                    hook(StepLog{"finetune", pass, result.steps, result.final_loss, norm,
                                 plan.lr_cnn, plan.lr_rest, batch_accuracy(logits, targets)});
                }
            }
        }
    }
    return result;
}

}  // namespace sleepscore
