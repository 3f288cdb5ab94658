#pragma once

// Single-file versioned checkpoint: magic header, model geometry, training
// provenance and every named parameter array with its shape (little-endian).

#include <cstdint>
#include <string>
#include <vector>

#include "sleepscore/model.hpp"
#include "sleepscore/train.hpp"

namespace sleepscore {

struct CheckpointMeta {
    std::string phase;  // "pretrain" (branches only) or "finetune" (full model)
    std::uint64_t seed = 0;
    std::int64_t pass = 0;
    std::int64_t step = 0;
    std::vector<std::string> train_subjects;
};

struct NamedShapedArray {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<double> values;
};

struct Checkpoint {
    ModelConfig config;
    CheckpointMeta meta;
    std::vector<NamedShapedArray> arrays;
};

/// Every parameter and batch-norm statistic of the model, by name.
Checkpoint snapshot(SleepStageNet& model, CheckpointMeta meta);

/// The CNN-branch subset, as written after pre-training.
Checkpoint cnn_snapshot(SleepStageNet& model, CheckpointMeta meta);

/// Rebuilds a model from a full checkpoint; every parameter must be present
/// exactly once with its expected shape.
SleepStageNet restore(const Checkpoint& cp);

/// The checkpoint's arrays without shapes, for replace_cnns.
NamedArrays flat_arrays(const Checkpoint& cp);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& cp);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sleepscore
