#pragma once

// Two-step training: class-balanced pre-training of the CNN branches behind a
// throwaway softmax head, then whole-model fine-tuning on sequential data with
// dual learning rates, global-norm gradient clipping and selective L2 decay.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sleepscore/dataset.hpp"
#include "sleepscore/model.hpp"

namespace sleepscore {

struct TrainPlan {
    std::int64_t pretrain_passes = 100;
    std::int64_t finetune_passes = 200;
    std::int64_t pretrain_batch = 100;
    std::int64_t finetune_batch = 10;  // parallel lanes per subject
    std::int64_t seq_len = 25;
    double lr_pretrain = 1e-4;
    double lr_cnn = 1e-6;   // fine-tuning rate for the pre-trained branches
    double lr_rest = 1e-4;  // fine-tuning rate for everything else
    double clip_threshold = 10.0;
    double weight_decay = 1e-3;
};

/// Counts, lengths and lr_rest must be positive; lr_cnn may be zero (frozen
/// branches) but never above lr_rest.
void validate(const TrainPlan& plan);

struct ParamGroup {
    std::vector<std::pair<std::string, Tensor>> params;
    double lr = 0.0;
};

class Adam {
public:
    explicit Adam(std::vector<ParamGroup> groups, double beta1 = 0.9,
                  double beta2 = 0.999, double epsilon = 1e-8);

    /// One update from the accumulated gradients. NaN gradients abort,
    /// naming the offending parameter.
    void step();
    void zero_grads();
    std::int64_t steps() const { return t_; }

private:
    std::vector<ParamGroup> groups_;
    double beta1_, beta2_, epsilon_;
    std::int64_t t_ = 0;
    std::vector<std::vector<std::vector<double>>> m_, v_;
};

double global_grad_norm(const std::vector<std::pair<std::string, Tensor>>& params);

/// Scales all gradients by threshold/norm when the joint norm exceeds the
/// threshold. Returns the pre-clip norm.
double clip_global_norm(const std::vector<std::pair<std::string, Tensor>>& params,
                        double threshold);

/// lambda * sum of squared entries, as a graph node (gradient 2*lambda*w).
Tensor l2_penalty(const std::vector<Tensor>& weights, double lambda);

struct StepLog {
    std::string phase;
    std::int64_t pass = 0;
    std::int64_t step = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double lr_cnn = 0.0;
    double lr_rest = 0.0;
    double batch_accuracy = 0.0;
};

using StepHook = std::function<void(const StepLog&)>;

std::string step_log_header();
std::string step_log_line(const StepLog& log);

using NamedArrays = std::vector<std::pair<std::string, std::vector<double>>>;

/// CNN-branch parameters plus their batch-norm statistics, by name.
NamedArrays extract_cnn(SleepStageNet& model);
void replace_cnns(SleepStageNet& model, const NamedArrays& arrays);

/// The lr_cnn / lr_rest partition of the trainable parameters.
std::pair<std::vector<std::pair<std::string, Tensor>>,
          std::vector<std::pair<std::string, Tensor>>>
partition_params(SleepStageNet& model);

struct PretrainResult {
    NamedArrays cnn;  // pre-trained branch parameters; the head is discarded
    std::int64_t steps = 0;
    double first_pass_loss = 0.0;
    double final_loss = 0.0;
};

/// Trains the CNN branches on an already class-balanced epoch list.
PretrainResult pretrain(SleepStageNet& model,
                        const std::vector<const EpochRecord*>& balanced,
                        const TrainPlan& plan, Rng& rng, const StepHook& hook = {});

struct FinetuneResult {
    std::int64_t steps = 0;
    std::int64_t state_resets = 0;
    double final_loss = 0.0;
};

using ResetHook = std::function<void(const std::string& subject_id)>;

/// Transplants the pre-trained branch parameters, then fine-tunes the whole
/// network subject by subject with per-subject state resets.
FinetuneResult finetune(SleepStageNet& model, const NamedArrays& pretrained_cnn,
                        const std::vector<const SubjectRecording*>& subjects,
                        const TrainPlan& plan, Rng& rng, const StepHook& hook = {},
                        const ResetHook& on_reset = {});

}  // namespace sleepscore
