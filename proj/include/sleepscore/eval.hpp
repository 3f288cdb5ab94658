#pragma once

// Cross-validation orchestration plus the model-analysis operations: first
// conv-layer filter activation maps and forward-LSTM cell traces.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sleepscore/dataset.hpp"
#include "sleepscore/metrics.hpp"
#include "sleepscore/model.hpp"
#include "sleepscore/train.hpp"

namespace sleepscore {

struct CvOptions {
    ModelConfig config;
    TrainPlan plan;
    std::int64_t folds = 0;
    std::int64_t jobs = 1;
    std::uint64_t seed = 0;
};

struct FoldResult {
    std::int64_t fold = 0;
    std::vector<std::string> test_subjects;
    ConfusionMatrix confusion;
    std::vector<StepLog> logs;  // pretraining then fine-tuning, in step order
    std::vector<std::pair<std::string, std::vector<Prediction>>> predictions;
};

struct CvResult {
    std::vector<FoldResult> folds;
    ConfusionMatrix pooled;
    MetricsReport report;
};

/// Called once per finished fold, serialized, while the fold's trained model
/// is still alive (for checkpointing).
using FoldSink = std::function<void(const FoldResult&, SleepStageNet&)>;

/// Subject-wise k-fold cross-validation: trains the two-step pipeline per
/// fold, predicts that fold's held-out subjects, pools every test prediction
/// and scores the pooled confusion. Folds run on up to `jobs` worker threads;
/// per-fold generators are forked from the seed up front, so results do not
/// depend on scheduling. Any fold failure aborts, naming the fold.
CvResult run_cv(const std::vector<SubjectRecording>& subjects, const CvOptions& options,
                const FoldSink& sink = {});

struct FilterActivationMap {
    bool large_branch = false;
    std::vector<std::vector<double>> u;  // [stage][filter], each row in [0,1]
    std::array<bool, kNumStages> empty{};  // no epoch was predicted as this stage
};

/// Per-stage mean of the time-summed first-conv-layer activations (post
/// ReLU), grouped by the supplied predicted stage of each epoch, then min-max
/// rescaled per stage row. Stages never predicted yield an all-zero flagged
/// row. Group sums are order-canonicalized, so any reordering of the epochs
/// produces bit-identical maps.
FilterActivationMap filter_activations(SleepStageNet& model,
                                       const std::vector<const EpochRecord*>& epochs,
                                       const std::vector<Stage>& predictions,
                                       bool large_branch);

struct CellTrace {
    std::vector<std::int64_t> cells;         // requested forward-LSTM cell indices
    std::vector<std::int64_t> epoch_indices;
    std::vector<Stage> stages;               // predicted stage per epoch
    std::vector<std::vector<double>> values;  // [epoch][cell], tanh of the cell state
};

/// Predicts the subject, then replays the forward LSTM stack from a fresh
/// state recording tanh(c) of the requested top-layer cells after every
/// epoch.
CellTrace cell_trace(SleepStageNet& model, const SubjectRecording& subject,
                     const std::vector<std::int64_t>& cells, Rng& rng);

}  // namespace sleepscore
