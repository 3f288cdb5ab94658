#pragma once

// SleepStageNet: two 1D-CNN branches sized from the sampling rate, feature
// concatenation, a bidirectional peephole-LSTM stack with an FC residual
// shortcut, and a 5-way softmax projection.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sleepscore/dataset.hpp"
#include "sleepscore/nn.hpp"
#include "sleepscore/rng.hpp"
#include "sleepscore/tensor.hpp"

namespace sleepscore {

struct BranchSpec {
    std::int64_t conv1_width = 0;
    std::int64_t conv1_stride = 0;
    std::int64_t pool1_size = 0;
    std::int64_t pool1_stride = 0;
    std::int64_t conv2_width = 0;  // three stride-1 blocks back to back
    std::int64_t pool2_size = 0;
    std::int64_t pool2_stride = 0;
    std::int64_t n_filters1 = 64;
    std::int64_t n_filters2 = 128;
};

struct ModelConfig {
    std::int64_t fs = 100;
    std::int64_t n_classes = 5;
    BranchSpec small;
    BranchSpec large;
    std::int64_t lstm_hidden = 512;
    std::int64_t lstm_layers = 2;
    std::int64_t shortcut_width = 1024;  // must equal 2*lstm_hidden
    std::int64_t seq_length = 25;
    double dropout_p = 0.5;
};

/// Derives branch geometry from the sampling rate: small filters at fs/2 with
/// stride fs/16, large filters at fs*4 with stride fs/2 (rounded, minimum 1).
ModelConfig make_config(std::int64_t fs);

/// Output length after each stage of a branch: conv1, pool1, the three conv
/// blocks, pool2.
std::vector<std::int64_t> branch_out_lens(const BranchSpec& spec, std::int64_t epoch_len);
std::int64_t branch_feature_width(const BranchSpec& spec, std::int64_t epoch_len);

struct Branch {
    BranchSpec spec;
    std::vector<ConvBlock> blocks;  // conv1 + three conv2 blocks
};

struct SleepStageNet {
    ModelConfig config;
    Branch small;
    Branch large;
    LstmStackParams fwd_lstm;
    LstmStackParams bwd_lstm;
    LstmStackState fwd_state;
    LstmStackState bwd_state;
    DenseBlock shortcut;
    Tensor out_w;  // [shortcut_width, n_classes]
    Tensor out_b;  // [n_classes]
    std::int64_t feature_width = 0;
};

SleepStageNet build(const ModelConfig& config, Rng& rng);

/// CNN features for a batch of epochs [batch, fs*30, 1] -> [batch, D],
/// including the post-concatenation dropout.
Tensor featurize(SleepStageNet& model, const Tensor& epochs, Mode mode, Rng& rng);

/// Post-relu output of one branch's first conv block, [batch, len, 64].
Tensor branch_conv1(SleepStageNet& model, const Tensor& epochs, bool large_branch, Mode mode);

/// One window over the sequence model. features[t] is [lanes, D]; the model
/// states must be sized for that lane count. Returns per-position logits
/// [lanes, n_classes]; states advance and stay detached.
std::vector<Tensor> sequence_pass(SleepStageNet& model, const std::vector<Tensor>& features,
                                  Mode mode, Rng& rng);

/// Single-lane convenience: [seq, D] -> [seq, n_classes].
Tensor sequence_logits(SleepStageNet& model, const Tensor& features, Mode mode, Rng& rng);

void reset_states(SleepStageNet& model, std::int64_t lanes);

/// Keeps only the given state rows (in order), shrinking the lane count.
void select_state_lanes(SleepStageNet& model, const std::vector<std::int64_t>& rows);

struct Prediction {
    std::int64_t epoch_index = 0;
    Stage stage = Stage::Wake;
    std::array<double, kNumStages> probs{};
};

/// Scores a whole recording in order: resets states, walks windows of
/// seq_length epochs, emits the argmax stage and softmax probabilities.
std::vector<Prediction> predict(SleepStageNet& model, const SubjectRecording& subject,
                                Rng& rng);

std::vector<std::pair<std::string, Tensor>> named_params(SleepStageNet& model);
std::vector<std::pair<std::string, std::vector<double>*>> named_stats(SleepStageNet& model);

/// True for parameters of the two CNN branches (the low-learning-rate group).
bool is_cnn_param(const std::string& name);

/// The first-layer conv filters of both branches (the weight-decay set).
std::vector<Tensor> decay_params(SleepStageNet& model);

Tensor epochs_to_tensor(const std::vector<const EpochRecord*>& epochs, std::int64_t fs);

}  // namespace sleepscore
