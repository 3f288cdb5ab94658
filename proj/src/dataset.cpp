#include "sleepscore/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "binio.hpp"

namespace sleepscore {

namespace {

const std::array<std::string, kNumStages> kStageNames = {"W", "N1", "N2", "N3", "REM"};

constexpr char kCacheMagic[8] = {'S', 'S', 'E', 'P', 'O', 'C', 'H', '1'};
constexpr std::uint32_t kCacheVersion = 1;

}  // namespace

const std::string& stage_name(Stage s) {
    return kStageNames[static_cast<std::size_t>(s)];
}

Stage stage_from_name(const std::string& name) {
    for (int i = 0; i < kNumStages; ++i) {
        if (kStageNames[static_cast<std::size_t>(i)] == name) {
            return static_cast<Stage>(i);
        }
    }
    throw std::invalid_argument("unknown stage name '" + name + "'");
}

std::optional<Stage> map_label(const std::string& raw, ScoringStandard standard) {
    if (raw == "Sleep stage W" || raw == "W") {
        return Stage::Wake;
    }
    if (raw == "Sleep stage R" || raw == "R" || raw == "REM") {
        return Stage::Rem;
    }
    if (raw == "Movement time" || raw == "MOVEMENT" || raw == "Sleep stage ?" ||
        raw == "UNKNOWN" || raw == "?") {
        return std::nullopt;
    }
    if (standard == ScoringStandard::Rk) {
        if (raw == "Sleep stage 1" || raw == "1") {
            return Stage::N1;
        }
        if (raw == "Sleep stage 2" || raw == "2") {
            return Stage::N2;
        }
        if (raw == "Sleep stage 3" || raw == "3" || raw == "Sleep stage 4" || raw == "4") {
            return Stage::N3;  // N3 and N4 merge
        }
    } else {
        if (raw == "Sleep stage N1" || raw == "N1") {
            return Stage::N1;
        }
        if (raw == "Sleep stage N2" || raw == "N2") {
            return Stage::N2;
        }
        if (raw == "Sleep stage N3" || raw == "N3") {
            return Stage::N3;
        }
    }
    throw std::invalid_argument("unknown sleep stage label '" + raw + "'");
}

SubjectRecording extract_epochs(const std::vector<double>& signal, std::int64_t fs,
                                const std::vector<Annotation>& annotations,
                                const std::string& subject_id, ScoringStandard standard) {
    if (fs < 1) {
        throw std::invalid_argument("extract_epochs: sampling rate must be positive");
    }
    const std::int64_t epoch_samples = fs * 30;
    SubjectRecording out;
    out.subject_id = subject_id;
    out.fs = fs;
    for (const auto& ann : annotations) {
        const auto stage = map_label(ann.label, standard);
        if (!stage.has_value()) {
            continue;  // excluded spans are dropped before any length check
        }
        if (ann.onset_s < 0.0 || std::fmod(ann.onset_s, 30.0) != 0.0) {
            throw std::invalid_argument("extract_epochs: annotation onset " +
                                        std::to_string(ann.onset_s) +
                                        " s is not 30-s aligned");
        }
        if (ann.duration_s <= 0.0 || std::fmod(ann.duration_s, 30.0) != 0.0) {
            throw std::invalid_argument("extract_epochs: annotation duration " +
                                        std::to_string(ann.duration_s) +
                                        " s is not a positive multiple of 30 s");
        }
        const std::int64_t first_epoch = static_cast<std::int64_t>(ann.onset_s / 30.0);
        const std::int64_t n_epochs = static_cast<std::int64_t>(ann.duration_s / 30.0);
        for (std::int64_t e = 0; e < n_epochs; ++e) {
            const std::int64_t idx = first_epoch + e;
            const std::int64_t start = idx * epoch_samples;
            if (start + epoch_samples > static_cast<std::int64_t>(signal.size())) {
                throw std::invalid_argument(
                    "extract_epochs: subject " + subject_id + ": epoch " + std::to_string(idx) +
                    " needs samples up to " + std::to_string(start + epoch_samples) +
                    " but the signal has " + std::to_string(signal.size()));
            }
            EpochRecord rec;
            rec.epoch_index = idx;
            rec.label = *stage;
            rec.samples.assign(signal.begin() + start, signal.begin() + start + epoch_samples);
            out.epochs.push_back(std::move(rec));
        }
    }
    std::sort(out.epochs.begin(), out.epochs.end(),
              [](const EpochRecord& a, const EpochRecord& b) {
                  return a.epoch_index < b.epoch_index;
              });
    return out;
}

SubjectRecording trim_wake(const SubjectRecording& subject) {
    std::int64_t first = -1, last = -1;
    for (std::size_t i = 0; i < subject.epochs.size(); ++i) {
        if (subject.epochs[i].label != Stage::Wake) {
            if (first < 0) {
                first = static_cast<std::int64_t>(i);
            }
            last = static_cast<std::int64_t>(i);
        }
    }
    if (first < 0) {
        throw std::runtime_error("trim_wake: subject " + subject.subject_id +
                                 " contains only wake epochs");
    }
    const std::int64_t lo = std::max<std::int64_t>(0, first - 60);
    const std::int64_t hi =
        std::min<std::int64_t>(static_cast<std::int64_t>(subject.epochs.size()) - 1, last + 60);
    SubjectRecording out;
    out.subject_id = subject.subject_id;
    out.fs = subject.fs;
    out.epochs.assign(subject.epochs.begin() + lo, subject.epochs.begin() + hi + 1);
    return out;
}

std::vector<std::int64_t> oversample_indices(const std::vector<Stage>& labels, Rng& rng) {
    std::array<std::vector<std::int64_t>, kNumStages> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        by_class[static_cast<std::size_t>(labels[i])].push_back(
            static_cast<std::int64_t>(i));
    }
    std::size_t target = 0;
    for (int c = 0; c < kNumStages; ++c) {
        if (by_class[static_cast<std::size_t>(c)].empty()) {
            throw std::invalid_argument("oversample: no epochs of stage " +
                                        kStageNames[static_cast<std::size_t>(c)]);
        }
        target = std::max(target, by_class[static_cast<std::size_t>(c)].size());
    }
    std::vector<std::int64_t> out;
    out.reserve(target * kNumStages);
    for (int c = 0; c < kNumStages; ++c) {
        const auto& idx = by_class[static_cast<std::size_t>(c)];
        const std::size_t copies = target / idx.size();
        const std::size_t remainder = target - copies * idx.size();
        for (std::size_t r = 0; r < copies; ++r) {
            out.insert(out.end(), idx.begin(), idx.end());
        }
        for (std::size_t r = 0; r < remainder; ++r) {
            out.push_back(idx[rng.uniform_int(idx.size())]);
        }
    }
    return out;
}

std::vector<SequenceStep> arrange_sequences(std::int64_t n_epochs, std::int64_t lanes,
                                            std::int64_t seq_len) {
    if (lanes < 1 || seq_len < 1) {
        throw std::invalid_argument("arrange_sequences: lanes and seq_len must be positive");
    }
    if (n_epochs < lanes) {
        throw std::invalid_argument("arrange_sequences: " + std::to_string(n_epochs) +
                                    " epochs cannot fill " + std::to_string(lanes) + " lanes");
    }
    const std::int64_t base = n_epochs / lanes;
    std::vector<std::int64_t> start(static_cast<std::size_t>(lanes));
    std::vector<std::int64_t> len(static_cast<std::size_t>(lanes), base);
    for (std::int64_t l = 0; l < lanes; ++l) {
        start[static_cast<std::size_t>(l)] = l * base;
    }
    len[static_cast<std::size_t>(lanes - 1)] += n_epochs % lanes;

    std::vector<std::int64_t> used(static_cast<std::size_t>(lanes), 0);
    std::vector<SequenceStep> steps;
    while (true) {
        SequenceStep step;
        std::int64_t shortest = seq_len;
        for (std::int64_t l = 0; l < lanes; ++l) {
            const std::int64_t left = len[static_cast<std::size_t>(l)] -
                                      used[static_cast<std::size_t>(l)];
            if (left > 0) {
                step.lane_ids.push_back(l);
                shortest = std::min(shortest, left);
            }
        }
        if (step.lane_ids.empty()) {
            break;
        }
        step.step_len = shortest;
        for (const std::int64_t l : step.lane_ids) {
            for (std::int64_t t = 0; t < shortest; ++t) {
                step.epoch_indices.push_back(start[static_cast<std::size_t>(l)] +
                                             used[static_cast<std::size_t>(l)] + t);
            }
        }
        for (const std::int64_t l : step.lane_ids) {
            used[static_cast<std::size_t>(l)] += shortest;
        }
        steps.push_back(std::move(step));
    }
    return steps;
}

std::vector<std::vector<std::int64_t>> split_folds(std::int64_t n_subjects, std::int64_t k) {
    if (k < 1) {
        throw std::invalid_argument("split_folds: k must be positive");
    }
    if (k > n_subjects) {
        throw std::invalid_argument("split_folds: k=" + std::to_string(k) + " exceeds the " +
                                    std::to_string(n_subjects) + " subjects");
    }
    std::vector<std::vector<std::int64_t>> folds(static_cast<std::size_t>(k));
    std::int64_t next = 0;
    for (std::int64_t i = 0; i < k; ++i) {
        const std::int64_t size = n_subjects / k + (i < n_subjects % k ? 1 : 0);
        for (std::int64_t j = 0; j < size; ++j) {
            folds[static_cast<std::size_t>(i)].push_back(next++);
        }
    }
    return folds;
}

void write_epoch_cache(const std::string& path, const std::vector<SubjectRecording>& subjects,
                       std::int64_t fs) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCacheMagic, kCacheMagic + 8);
    detail::put_u32(out, kCacheVersion);
    detail::put_i64(out, fs);
    detail::put_i64(out, static_cast<std::int64_t>(subjects.size()));
    for (const auto& s : subjects) {
        if (s.fs != fs) {
            throw std::invalid_argument("epoch cache: subject " + s.subject_id +
                                        " sampled at " + std::to_string(s.fs) +
                                        " Hz, cache is " + std::to_string(fs) + " Hz");
        }
        detail::put_string(out, s.subject_id);
        detail::put_i64(out, static_cast<std::int64_t>(s.epochs.size()));
        for (const auto& e : s.epochs) {
            if (static_cast<std::int64_t>(e.samples.size()) != fs * 30) {
                throw std::invalid_argument("epoch cache: epoch " +
                                            std::to_string(e.epoch_index) + " of subject " +
                                            s.subject_id + " has " +
                                            std::to_string(e.samples.size()) + " samples");
            }
            detail::put_i64(out, e.epoch_index);
            detail::put_u8(out, static_cast<std::uint8_t>(e.label));
            for (const double v : e.samples) {
                detail::put_f64(out, v);
            }
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("epoch cache: cannot write " + path);
    }
    f.write(reinterpret_cast<const char*>(out.data()),
            static_cast<std::streamsize>(out.size()));
}

std::vector<SubjectRecording> read_epoch_cache(const std::string& path, std::int64_t* fs_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("epoch cache: cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    detail::BinReader r(bytes.data(), bytes.size(), "epoch cache " + path);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kCacheMagic, 8) != 0) {
        throw std::runtime_error("epoch cache: " + path + " has the wrong magic");
    }
    const std::uint32_t version = r.u32();
    if (version != kCacheVersion) {
        throw std::runtime_error("epoch cache: " + path + " is version " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kCacheVersion));
    }
    const std::int64_t fs = r.i64();
    if (fs_out != nullptr) {
        *fs_out = fs;
    }
    const std::int64_t n_subjects = r.i64();
    std::vector<SubjectRecording> subjects;
    subjects.reserve(static_cast<std::size_t>(n_subjects));
    for (std::int64_t i = 0; i < n_subjects; ++i) {
        SubjectRecording s;
        s.subject_id = r.str();
        s.fs = fs;
        const std::int64_t n_epochs = r.i64();
        s.epochs.reserve(static_cast<std::size_t>(n_epochs));
        for (std::int64_t e = 0; e < n_epochs; ++e) {
            EpochRecord rec;
            rec.epoch_index = r.i64();
            const std::uint8_t label = r.u8();
            if (label >= kNumStages) {
                throw std::runtime_error("epoch cache: invalid stage byte " +
                                         std::to_string(label));
            }
            rec.label = static_cast<Stage>(label);
            rec.samples.resize(static_cast<std::size_t>(fs * 30));
            r.raw(rec.samples.data(), rec.samples.size() * 8);
            s.epochs.push_back(std::move(rec));
        }
        subjects.push_back(std::move(s));
    }
    if (!r.done()) {
        throw std::runtime_error("epoch cache: " + path + " has trailing bytes");
    }
    return subjects;
}

std::vector<std::pair<std::int64_t, std::string>> parse_sidecar_hypnogram(
    const std::string& text) {
    std::vector<std::pair<std::int64_t, std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw std::runtime_error("hypnogram line " + std::to_string(line_no) +
                                     ": expected 'epoch_index,stage', got '" + line + "'");
        }
        try {
            out.emplace_back(std::stoll(line.substr(0, comma)), line.substr(comma + 1));
        } catch (const std::exception&) {
            throw std::runtime_error("hypnogram line " + std::to_string(line_no) +
                                     ": non-numeric epoch index in '" + line + "'");
        }
    }
    return out;
}

namespace {

std::size_t find_signal(const EdfFile& file, const std::string& label) {
    for (std::size_t i = 0; i < file.header.signals.size(); ++i) {
        if (file.header.signals[i].label == label) {
            return i;
        }
    }
    std::string available;
    for (const auto& s : file.header.signals) {
        if (!available.empty()) {
            available += ", ";
        }
        available += "'" + s.label + "'";
    }
    throw std::invalid_argument("channel '" + label + "' not found; available: " + available);
}

}  // namespace

std::vector<double> select_channel(const EdfFile& file, const std::string& spec) {
    const std::size_t colon = spec.find(':');
    const std::string primary = spec.substr(0, colon);
    const std::size_t pi = find_signal(file, primary);
    std::vector<double> out = digital_to_physical(file.samples[pi], file.header.signals[pi]);
    if (colon != std::string::npos) {
        const std::string reference = spec.substr(colon + 1);
        const std::size_t ri = find_signal(file, reference);
        if (file.samples[ri].size() != out.size()) {
            throw std::invalid_argument("montage " + spec + ": '" + primary + "' has " +
                                        std::to_string(out.size()) + " samples but '" +
                                        reference + "' has " +
                                        std::to_string(file.samples[ri].size()));
        }
        const std::vector<double> ref =
            digital_to_physical(file.samples[ri], file.header.signals[ri]);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] -= ref[i];
        }
    }
    return out;
}

std::int64_t signal_fs(const EdfFile& file, std::size_t signal_index) {
    if (signal_index >= file.header.signals.size()) {
        throw std::invalid_argument("signal index out of range");
    }
    const double dur = file.header.record_duration_s;
    if (dur <= 0.0) {
        throw std::invalid_argument("record duration must be positive to derive a rate");
    }
    const double fs =
        static_cast<double>(file.header.signals[signal_index].samples_per_record) / dur;
    const auto rounded = static_cast<std::int64_t>(std::llround(fs));
    if (rounded < 1 || std::abs(fs - static_cast<double>(rounded)) > 1e-9) {
        throw std::invalid_argument("signal '" + file.header.signals[signal_index].label +
                                    "' has a non-integral rate " + std::to_string(fs));
    }
    return rounded;
}

}  // namespace sleepscore
