#pragma once

// Epoch extraction and arrangement: label harmonization, wake trimming,
// class-balanced oversampling, sequence batching, subject-level folds and the
// prepared-epoch cache.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sleepscore/edf.hpp"
#include "sleepscore/rng.hpp"

namespace sleepscore {

enum class Stage : std::uint8_t { Wake = 0, N1 = 1, N2 = 2, N3 = 3, Rem = 4 };

inline constexpr int kNumStages = 5;

const std::string& stage_name(Stage s);
Stage stage_from_name(const std::string& name);

enum class ScoringStandard { Aasm, Rk };

/// Maps a raw hypnogram label onto the five-stage alphabet. Movement and
/// unknown epochs map to nullopt (excluded); unrecognized text throws.
std::optional<Stage> map_label(const std::string& raw, ScoringStandard standard);

struct EpochRecord {
    std::int64_t epoch_index = 0;
    Stage label = Stage::Wake;
    std::vector<double> samples;  // fs*30 physical values
};

struct SubjectRecording {
    std::string subject_id;
    std::int64_t fs = 0;
    std::vector<EpochRecord> epochs;
};

/// Cuts 30-s epochs out of a physical-unit signal according to annotations.
/// Excluded stages produce no epochs; spans extending past the signal end are
/// an error unless excluded.
SubjectRecording extract_epochs(const std::vector<double>& signal, std::int64_t fs,
                                const std::vector<Annotation>& annotations,
                                const std::string& subject_id, ScoringStandard standard);

/// Keeps at most 60 wake epochs on either side of the first/last sleep epoch.
SubjectRecording trim_wake(const SubjectRecording& subject);

/// Returns indices into `labels` such that every stage count equals the
/// largest one: whole-number duplication plus a seeded random remainder drawn
/// with replacement. Every original index appears at least once.
std::vector<std::int64_t> oversample_indices(const std::vector<Stage>& labels, Rng& rng);

struct SequenceStep {
    std::vector<std::int64_t> lane_ids;       // active lanes, ascending
    std::int64_t step_len = 0;                // uniform across active lanes
    std::vector<std::int64_t> epoch_indices;  // lane-major, lane_ids.size()*step_len entries
};

/// Splits one subject's n epochs into `lanes` contiguous sub-sequences (the
/// remainder goes to the last lane) and emits steps of up to seq_len epochs
/// taken from every still-active lane in parallel.
std::vector<SequenceStep> arrange_sequences(std::int64_t n_epochs, std::int64_t lanes,
                                            std::int64_t seq_len);

/// Subject-level k-fold split: fold i tests a contiguous chunk of subjects of
/// size n/k (+1 for the first n%k folds). Returns test-subject indices.
std::vector<std::vector<std::int64_t>> split_folds(std::int64_t n_subjects, std::int64_t k);

void write_epoch_cache(const std::string& path, const std::vector<SubjectRecording>& subjects,
                       std::int64_t fs);
std::vector<SubjectRecording> read_epoch_cache(const std::string& path, std::int64_t* fs_out);

/// Lines of "epoch_index,stage_label"; blank lines and '#' comments ignored.
std::vector<std::pair<std::int64_t, std::string>> parse_sidecar_hypnogram(
    const std::string& text);

/// Channel selection with optional montage subtraction: "F4:EOG Left" yields
/// F4 minus EOG Left in physical units. Unknown names list available labels.
std::vector<double> select_channel(const EdfFile& file, const std::string& spec);

/// Sampling rate of a signal, from samples_per_record / record_duration.
std::int64_t signal_fs(const EdfFile& file, std::size_t signal_index);

}  // namespace sleepscore
