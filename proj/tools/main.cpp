#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sleepscore/checkpoint.hpp"
#include "sleepscore/dataset.hpp"
#include "sleepscore/edf.hpp"
#include "sleepscore/eval.hpp"
#include "sleepscore/hypnogram.hpp"
#include "sleepscore/metrics.hpp"
#include "sleepscore/model.hpp"
#include "sleepscore/train.hpp"

namespace {

using json = nlohmann::json;
using namespace sleepscore;

struct Recording {
    std::string id;
    std::string psg;
    std::string hypnogram;
};

struct RunConfig {
    std::vector<Recording> recordings;
    std::string channel;
    ScoringStandard standard = ScoringStandard::Rk;
    std::string cache;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    std::int64_t jobs = 1;
    std::int64_t folds = 0;
    TrainPlan plan;
    std::int64_t lstm_hidden = 0;  // 0 keeps the full-scale default
    double dropout_p = -1.0;       // <0 keeps the default
};

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("config: cannot open " + path);
    }
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config: " + path + ": " + e.what());
    }

    RunConfig cfg;
    for (const auto& r : j.value("recordings", json::array())) {
        Recording rec;
        rec.id = r.at("id").get<std::string>();
        rec.psg = r.at("psg").get<std::string>();
        rec.hypnogram = r.at("hypnogram").get<std::string>();
        cfg.recordings.push_back(std::move(rec));
    }
    cfg.channel = j.value("channel", "");
    const std::string standard = j.value("standard", "rk");
    if (standard == "rk") {
        cfg.standard = ScoringStandard::Rk;
    } else if (standard == "aasm") {
        cfg.standard = ScoringStandard::Aasm;
    } else {
        throw std::runtime_error("config: standard must be \"rk\" or \"aasm\", got \"" +
                                 standard + "\"");
    }
    cfg.cache = j.value("cache", "");
    cfg.out_dir = j.value("out_dir", ".");
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.jobs = j.value("jobs", std::int64_t{1});
    cfg.folds = j.value("folds", std::int64_t{0});

    if (j.contains("plan")) {
        const auto& p = j["plan"];
        TrainPlan& plan = cfg.plan;
        plan.pretrain_passes = p.value("pretrain_passes", plan.pretrain_passes);
        plan.finetune_passes = p.value("finetune_passes", plan.finetune_passes);
        plan.pretrain_batch = p.value("pretrain_batch", plan.pretrain_batch);
        plan.finetune_batch = p.value("finetune_batch", plan.finetune_batch);
        plan.seq_len = p.value("seq_len", plan.seq_len);
        plan.lr_pretrain = p.value("lr_pretrain", plan.lr_pretrain);
        plan.lr_cnn = p.value("lr_cnn", plan.lr_cnn);
        plan.lr_rest = p.value("lr_rest", plan.lr_rest);
        plan.clip_threshold = p.value("clip_threshold", plan.clip_threshold);
        plan.weight_decay = p.value("weight_decay", plan.weight_decay);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        cfg.lstm_hidden = m.value("lstm_hidden", std::int64_t{0});
        cfg.dropout_p = m.value("dropout_p", -1.0);
    }
    return cfg;
}

ModelConfig model_config_for(const RunConfig& cfg, std::int64_t fs) {
    ModelConfig config = make_config(fs);
    if (cfg.lstm_hidden > 0) {
        config.lstm_hidden = cfg.lstm_hidden;
        config.shortcut_width = 2 * cfg.lstm_hidden;
    }
    if (cfg.dropout_p >= 0.0) {
        config.dropout_p = cfg.dropout_p;
    }
    config.seq_length = cfg.plan.seq_len;
    return config;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
    return fnv1a(h, s.data(), s.size());
}

std::optional<std::vector<std::uint8_t>> try_read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        return std::nullopt;
    }
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    f << text;
    if (!f) {
        throw std::runtime_error("write to " + path + " failed");
    }
}

bool looks_like_edf(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 8 && bytes[0] == '0' && bytes[1] == ' ';
}

std::vector<Annotation> load_hypnogram(const std::string& path) {
    const auto bytes = try_read_bytes(path);
    if (!bytes) {
        throw std::runtime_error("cannot open " + path);
    }
    if (looks_like_edf(*bytes)) {
        const EdfFile file = parse_edf(*bytes);
        std::vector<Annotation> all;
        bool found = false;
        for (std::size_t i = 0; i < file.header.signals.size(); ++i) {
            if (file.header.signals[i].label == "EDF Annotations") {
                found = true;
                auto part = parse_edfplus_annotations(file, i);
                all.insert(all.end(), part.begin(), part.end());
            }
        }
        if (!found) {
            throw std::runtime_error(path + " has no EDF Annotations signal");
        }
        return all;
    }
    // sidecar text: epoch_index,stage_label lines
    std::vector<Annotation> all;
    for (const auto& [epoch_index, label] :
         parse_sidecar_hypnogram(std::string(bytes->begin(), bytes->end()))) {
        all.push_back(Annotation{static_cast<double>(epoch_index) * 30.0, 30.0, label});
    }
    return all;
}

json stage_counts_json(const std::array<std::int64_t, kNumStages>& counts) {
    json out;
    for (int s = 0; s < kNumStages; ++s) {
        out[stage_name(static_cast<Stage>(s))] = counts[static_cast<std::size_t>(s)];
    }
    return out;
}

std::array<std::int64_t, kNumStages> count_stages(const SubjectRecording& subject) {
    std::array<std::int64_t, kNumStages> counts{};
    for (const auto& e : subject.epochs) {
        ++counts[static_cast<std::size_t>(e.label)];
    }
    return counts;
}

json metrics_json(const MetricsReport& report) {
    json out;
    out["total_epochs"] = report.matrix.total();
    out["accuracy"] = report.accuracy;
    out["macro_f1"] = report.macro_f1;
    if (report.kappa_defined) {
        out["kappa"] = report.kappa;
    } else {
        out["kappa"] = nullptr;
    }
    json per_class = json::array();
    for (int s = 0; s < kNumStages; ++s) {
        const ClassScore& c = report.per_class[static_cast<std::size_t>(s)];
        per_class.push_back({{"stage", stage_name(static_cast<Stage>(s))},
                             {"precision", c.precision},
                             {"recall", c.recall},
                             {"f1", c.f1},
                             {"degenerate", c.degenerate}});
    }
    out["per_class"] = per_class;
    json rows = json::array();
    for (int r = 0; r < kNumStages; ++r) {
        json row = json::array();
        for (int c = 0; c < kNumStages; ++c) {
            row.push_back(report.matrix.counts[r][c]);
        }
        rows.push_back(row);
    }
    out["confusion"] = rows;
    return out;
}

void write_report_files(const std::string& out_dir, const std::string& prefix,
                        const MetricsReport& report) {
    write_text_file(out_dir + "/" + prefix + "report.txt", render_report(report));
    write_text_file(out_dir + "/" + prefix + "confusion.csv",
                    render_confusion_csv(report.matrix));
    write_text_file(out_dir + "/" + prefix + "metrics.json", metrics_json(report).dump(2) + "\n");
}

void write_step_logs(const std::string& path, const std::vector<StepLog>& logs) {
    std::string text = step_log_header() + "\n";
    for (const auto& log : logs) {
        text += step_log_line(log) + "\n";
    }
    write_text_file(path, text);
}

std::vector<SubjectRecording> load_cache(const RunConfig& cfg, std::int64_t* fs) {
    if (cfg.cache.empty()) {
        throw std::runtime_error("config: no \"cache\" path set; run prepare first");
    }
    return read_epoch_cache(cfg.cache, fs);
}

const SubjectRecording& find_subject(const std::vector<SubjectRecording>& subjects,
                                     const std::string& id) {
    for (const auto& s : subjects) {
        if (s.subject_id == id) {
            return s;
        }
    }
    std::string known;
    for (const auto& s : subjects) {
        known += (known.empty() ? "" : ", ") + s.subject_id;
    }
    throw std::runtime_error("subject '" + id + "' is not in the cache (has: " + known + ")");
}

// ---------------------------------------------------------------------------

int cmd_prepare(const RunConfig& cfg, bool strict) {
    if (cfg.recordings.empty()) {
        throw std::runtime_error("config: no recordings listed");
    }
    if (cfg.channel.empty()) {
        throw std::runtime_error("config: no channel selected");
    }
    if (cfg.cache.empty()) {
        throw std::runtime_error("config: no \"cache\" output path set");
    }

    std::uint64_t hash = 14695981039346656037ULL;
    hash = fnv1a(hash, cfg.channel);
    hash = fnv1a(hash, cfg.standard == ScoringStandard::Rk ? "rk" : "aasm");
    for (const auto& rec : cfg.recordings) {
        hash = fnv1a(hash, rec.id);
        for (const std::string* path : {&rec.psg, &rec.hypnogram}) {
            const auto bytes = try_read_bytes(*path);
            if (bytes) {
                hash = fnv1a(hash, bytes->data(), bytes->size());
            } else {
                hash = fnv1a(hash, "<unreadable>");
            }
        }
    }
    char hash_text[17];
    std::snprintf(hash_text, sizeof(hash_text), "%016llx",
                  static_cast<unsigned long long>(hash));

    std::filesystem::create_directories(cfg.out_dir);
    const std::string manifest_path = cfg.out_dir + "/manifest.json";
    if (std::filesystem::exists(manifest_path) && std::filesystem::exists(cfg.cache)) {
        std::ifstream f(manifest_path);
        json old;
        f >> old;
        if (old.value("input_hash", "") == hash_text) {
            std::cout << "prepare: inputs unchanged (hash " << hash_text
                      << "), cache is up to date\n";
            return 0;
        }
    }

    std::vector<SubjectRecording> subjects;
    std::vector<std::string> failures;
    std::int64_t fs = 0;
    for (const auto& rec : cfg.recordings) {
        try {
            const auto psg_bytes = try_read_bytes(rec.psg);
            if (!psg_bytes) {
                throw std::runtime_error("cannot open " + rec.psg);
            }
            const EdfFile psg = parse_edf(*psg_bytes);
            const std::vector<double> signal = select_channel(psg, cfg.channel);

            const std::string primary = cfg.channel.substr(0, cfg.channel.find(':'));
            std::size_t index = 0;
            for (; index < psg.header.signals.size(); ++index) {
                if (psg.header.signals[index].label == primary) {
                    break;
                }
            }
            const std::int64_t rec_fs = signal_fs(psg, index);
            if (fs == 0) {
                fs = rec_fs;
            } else if (rec_fs != fs) {
                throw std::runtime_error(rec.psg + " is sampled at " +
                                         std::to_string(rec_fs) + " Hz, others at " +
                                         std::to_string(fs));
            }

            const auto annotations = load_hypnogram(rec.hypnogram);
            SubjectRecording subject =
                extract_epochs(signal, rec_fs, annotations, rec.id, cfg.standard);
            subjects.push_back(trim_wake(subject));
        } catch (const std::exception& e) {
            failures.push_back(rec.id + ": " + e.what());
            std::cerr << "prepare: " << rec.id << " failed: " << e.what() << "\n";
            if (strict) {
                throw std::runtime_error("prepare: " + rec.id + " failed under --strict: " +
                                         e.what());
            }
        }
    }
    if (subjects.empty()) {
        throw std::runtime_error("prepare: every recording failed");
    }

    write_epoch_cache(cfg.cache, subjects, fs);

    json manifest;
    manifest["input_hash"] = hash_text;
    manifest["channel"] = cfg.channel;
    manifest["standard"] = cfg.standard == ScoringStandard::Rk ? "rk" : "aasm";
    manifest["fs"] = fs;
    manifest["cache"] = cfg.cache;
    std::array<std::int64_t, kNumStages> totals{};
    json per_subject = json::array();
    for (const auto& s : subjects) {
        const auto counts = count_stages(s);
        for (int i = 0; i < kNumStages; ++i) {
            totals[static_cast<std::size_t>(i)] += counts[static_cast<std::size_t>(i)];
        }
        per_subject.push_back({{"id", s.subject_id},
                               {"epochs", s.epochs.size()},
                               {"counts", stage_counts_json(counts)}});
    }
    manifest["subjects"] = per_subject;
    manifest["totals"] = stage_counts_json(totals);
    std::int64_t grand = 0;
    for (const auto c : totals) {
        grand += c;
    }
    manifest["total"] = grand;
    manifest["failures"] = failures;
    write_text_file(manifest_path, manifest.dump(2) + "\n");

    std::printf("%-12s %7s %7s %7s %7s %7s %8s\n", "subject", "W", "N1", "N2", "N3", "REM",
                "total");
    for (const auto& s : subjects) {
        const auto c = count_stages(s);
        std::printf("%-12s %7lld %7lld %7lld %7lld %7lld %8zu\n", s.subject_id.c_str(),
                    static_cast<long long>(c[0]), static_cast<long long>(c[1]),
                    static_cast<long long>(c[2]), static_cast<long long>(c[3]),
                    static_cast<long long>(c[4]), s.epochs.size());
    }
    std::printf("%-12s %7lld %7lld %7lld %7lld %7lld %8lld\n", "total",
                static_cast<long long>(totals[0]), static_cast<long long>(totals[1]),
                static_cast<long long>(totals[2]), static_cast<long long>(totals[3]),
                static_cast<long long>(totals[4]), static_cast<long long>(grand));
    std::cout << "prepare: wrote " << cfg.cache << " and " << manifest_path << " (hash "
              << hash_text << ")";
    if (!failures.empty()) {
        std::cout << ", " << failures.size() << " recording(s) failed";
    }
    std::cout << "\n";
    return failures.empty() ? 0 : 2;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& out_path) {
    std::int64_t fs = 0;
    const auto subjects = load_cache(cfg, &fs);
    const ModelConfig config = model_config_for(cfg, fs);

    Rng rng(cfg.seed);
    SleepStageNet model = build(config, rng);

    std::vector<const EpochRecord*> pool;
    std::vector<Stage> labels;
    std::vector<std::string> ids;
    for (const auto& s : subjects) {
        ids.push_back(s.subject_id);
        for (const auto& e : s.epochs) {
            pool.push_back(&e);
            labels.push_back(e.label);
        }
    }
    std::vector<const EpochRecord*> balanced;
    for (const std::int64_t i : oversample_indices(labels, rng)) {
        balanced.push_back(pool[static_cast<std::size_t>(i)]);
    }

    std::vector<StepLog> logs;
    const PretrainResult result =
        pretrain(model, balanced, cfg.plan, rng, [&](const StepLog& log) {
            logs.push_back(log);
            std::cout << step_log_line(log) << "\n";
        });

    std::filesystem::create_directories(cfg.out_dir);
    CheckpointMeta meta;
    meta.phase = "pretrain";
    meta.seed = cfg.seed;
    meta.pass = cfg.plan.pretrain_passes;
    meta.step = result.steps;
    meta.train_subjects = ids;
    const std::string path =
        out_path.empty() ? cfg.out_dir + "/pretrain.ckpt" : out_path;
    save_checkpoint(path, cnn_snapshot(model, meta));
    write_step_logs(cfg.out_dir + "/pretrain_log.csv", logs);
    std::cout << "pretrain: " << result.steps << " steps, final loss " << result.final_loss
              << ", wrote " << path << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& out_path) {
    if (checkpoint_path.empty()) {
        throw std::runtime_error("finetune: --checkpoint with the pretrain result is required");
    }
    std::int64_t fs = 0;
    const auto subjects = load_cache(cfg, &fs);
    const Checkpoint cp = load_checkpoint(checkpoint_path);
    if (cp.meta.phase != "pretrain") {
        throw std::runtime_error("finetune: " + checkpoint_path + " is a '" + cp.meta.phase +
                                 "' checkpoint, expected 'pretrain'");
    }
    if (cp.config.fs != fs) {
        throw std::runtime_error("finetune: checkpoint was built for " +
                                 std::to_string(cp.config.fs) + " Hz, the cache holds " +
                                 std::to_string(fs) + " Hz");
    }

    Rng rng(cfg.seed);
    SleepStageNet model = build(cp.config, rng);
    std::vector<const SubjectRecording*> ptrs;
    std::vector<std::string> ids;
    for (const auto& s : subjects) {
        ptrs.push_back(&s);
        ids.push_back(s.subject_id);
    }

    std::vector<StepLog> logs;
    const FinetuneResult result =
        finetune(model, flat_arrays(cp), ptrs, cfg.plan, rng, [&](const StepLog& log) {
            logs.push_back(log);
            std::cout << step_log_line(log) << "\n";
        });

    std::filesystem::create_directories(cfg.out_dir);
    CheckpointMeta meta;
    meta.phase = "finetune";
    meta.seed = cfg.seed;
    meta.pass = cfg.plan.finetune_passes;
    meta.step = result.steps;
    meta.train_subjects = ids;
    const std::string path =
        out_path.empty() ? cfg.out_dir + "/finetune.ckpt" : out_path;
    save_checkpoint(path, snapshot(model, meta));
    write_step_logs(cfg.out_dir + "/finetune_log.csv", logs);
    std::cout << "finetune: " << result.steps << " steps, final loss " << result.final_loss
              << ", wrote " << path << "\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                 bool allow_train_overlap) {
    std::int64_t fs = 0;
    const auto subjects = load_cache(cfg, &fs);
    std::filesystem::create_directories(cfg.out_dir);

    if (checkpoint_path.empty()) {
        CvOptions options;
        options.config = model_config_for(cfg, fs);
        options.plan = cfg.plan;
        options.folds = cfg.folds;
        options.jobs = cfg.jobs;
        options.seed = cfg.seed;
        const CvResult result =
            run_cv(subjects, options, [&](const FoldResult& fold, SleepStageNet& model) {
                const std::string stem = cfg.out_dir + "/fold_" + std::to_string(fold.fold);
                CheckpointMeta meta;
                meta.phase = "finetune";
                meta.seed = cfg.seed;
                meta.pass = cfg.plan.finetune_passes;
                meta.step = static_cast<std::int64_t>(fold.logs.size());
                for (const auto& s : subjects) {
                    if (std::find(fold.test_subjects.begin(), fold.test_subjects.end(),
                                  s.subject_id) == fold.test_subjects.end()) {
                        meta.train_subjects.push_back(s.subject_id);
                    }
                }
                save_checkpoint(stem + ".ckpt", snapshot(model, meta));
                write_step_logs(stem + "_log.csv", fold.logs);
                write_text_file(stem + "_confusion.csv",
                                render_confusion_csv(fold.confusion));
            });
        write_report_files(cfg.out_dir, "", result.report);
        std::cout << render_report(result.report);
        std::cout << "evaluate: " << result.folds.size() << " folds pooled over "
                  << result.pooled.total() << " epochs, artifacts in " << cfg.out_dir
                  << "\n";
        return 0;
    }

    const Checkpoint cp = load_checkpoint(checkpoint_path);
    if (cp.meta.phase != "finetune") {
        throw std::runtime_error("evaluate: " + checkpoint_path + " is a '" + cp.meta.phase +
                                 "' checkpoint, expected a full 'finetune' one");
    }
    if (cp.config.fs != fs) {
        throw std::runtime_error("evaluate: checkpoint was built for " +
                                 std::to_string(cp.config.fs) + " Hz, the cache holds " +
                                 std::to_string(fs) + " Hz");
    }
    std::string overlap;
    const std::set<std::string> trained(cp.meta.train_subjects.begin(),
                                        cp.meta.train_subjects.end());
    for (const auto& s : subjects) {
        if (trained.count(s.subject_id)) {
            overlap += (overlap.empty() ? "" : ", ") + s.subject_id;
        }
    }
    if (!overlap.empty() && !allow_train_overlap) {
        throw std::runtime_error(
            "evaluate: the checkpoint was trained on " + overlap +
            "; scoring them would leak training data (pass --allow-train-overlap to force)");
    }

    SleepStageNet model = restore(cp);
    Rng rng(cfg.seed);
    ConfusionMatrix pooled;
    for (const auto& s : subjects) {
        const auto preds = predict(model, s, rng);
        std::vector<Stage> expert, predicted;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            expert.push_back(s.epochs[i].label);
            predicted.push_back(preds[i].stage);
        }
        pooled.merge(confusion(expert, predicted));
    }
    const MetricsReport report = score(pooled);
    write_report_files(cfg.out_dir, "", report);
    std::cout << render_report(report);
    std::cout << "evaluate: " << subjects.size() << " subjects, " << pooled.total()
              << " epochs, artifacts in " << cfg.out_dir << "\n";
    return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                const std::string& subject_id, const std::string& hyp_text_path,
                const std::string& hyp_svg_path) {
    if (checkpoint_path.empty()) {
        throw std::runtime_error("predict: --checkpoint with a full model is required");
    }
    std::int64_t fs = 0;
    const auto subjects = load_cache(cfg, &fs);
    const Checkpoint cp = load_checkpoint(checkpoint_path);
    if (cp.meta.phase != "finetune") {
        throw std::runtime_error("predict: " + checkpoint_path + " is a '" + cp.meta.phase +
                                 "' checkpoint, expected a full 'finetune' one");
    }
    SleepStageNet model = restore(cp);

    std::vector<const SubjectRecording*> targets;
    if (!subject_id.empty()) {
        targets.push_back(&find_subject(subjects, subject_id));
    } else {
        for (const auto& s : subjects) {
            targets.push_back(&s);
        }
    }
    if ((!hyp_text_path.empty() || !hyp_svg_path.empty()) && targets.size() != 1) {
        throw std::runtime_error(
            "predict: hypnogram output needs a single subject; pass --subject");
    }

    Rng rng(cfg.seed);
    for (const auto* s : targets) {
        const auto preds = predict(model, *s, rng);
        std::vector<Stage> stages;
        for (const auto& p : preds) {
            char line[160];
            std::snprintf(line, sizeof(line), "%lld,%s,%.6f,%.6f,%.6f,%.6f,%.6f",
                          static_cast<long long>(p.epoch_index),
                          stage_name(p.stage).c_str(), p.probs[0], p.probs[1], p.probs[2],
                          p.probs[3], p.probs[4]);
            std::cout << line << "\n";
            stages.push_back(p.stage);
        }
        if (!hyp_text_path.empty()) {
            write_text_file(hyp_text_path, hypnogram_text(stages) + "\n");
        }
        if (!hyp_svg_path.empty()) {
            write_text_file(hyp_svg_path, hypnogram_svg(stages));
        }
    }
    return 0;
}

int cmd_analyze(const RunConfig& cfg, const std::string& checkpoint_path,
                const std::string& subject_id, std::vector<std::int64_t> cells) {
    if (checkpoint_path.empty()) {
        throw std::runtime_error("analyze: --checkpoint with a full model is required");
    }
    std::int64_t fs = 0;
    const auto subjects = load_cache(cfg, &fs);
    const Checkpoint cp = load_checkpoint(checkpoint_path);
    if (cp.meta.phase != "finetune") {
        throw std::runtime_error("analyze: " + checkpoint_path + " is a '" + cp.meta.phase +
                                 "' checkpoint, expected a full 'finetune' one");
    }
    SleepStageNet model = restore(cp);
    std::filesystem::create_directories(cfg.out_dir);

    Rng rng(cfg.seed);
    std::vector<const EpochRecord*> epochs;
    std::vector<Stage> predicted;
    for (const auto& s : subjects) {
        const auto preds = predict(model, s, rng);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            epochs.push_back(&s.epochs[i]);
            predicted.push_back(preds[i].stage);
        }
    }
    for (const bool large : {false, true}) {
        const FilterActivationMap map = filter_activations(model, epochs, predicted, large);
        std::string csv = "stage,empty";
        for (std::size_t k = 0; k < map.u[0].size(); ++k) {
            csv += ",f" + std::to_string(k);
        }
        csv += "\n";
        for (int s = 0; s < kNumStages; ++s) {
            csv += stage_name(static_cast<Stage>(s));
            csv += map.empty[static_cast<std::size_t>(s)] ? ",1" : ",0";
            for (const double v : map.u[static_cast<std::size_t>(s)]) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), ",%.6f", v);
                csv += buf;
            }
            csv += "\n";
        }
        const std::string path =
            cfg.out_dir + (large ? "/activations_large.csv" : "/activations_small.csv");
        write_text_file(path, csv);
        std::cout << "analyze: wrote " << path << "\n";
    }

    const SubjectRecording& subject =
        subject_id.empty() ? subjects.front() : find_subject(subjects, subject_id);
    if (cells.empty()) {
        for (std::int64_t c = 0; c < std::min<std::int64_t>(4, cp.config.lstm_hidden); ++c) {
            cells.push_back(c);
        }
    }
    const CellTrace trace = cell_trace(model, subject, cells, rng);
    std::string csv = "epoch_index,stage";
    for (const std::int64_t c : trace.cells) {
        csv += ",cell" + std::to_string(c);
    }
    csv += "\n";
    for (std::size_t i = 0; i < trace.values.size(); ++i) {
        csv += std::to_string(trace.epoch_indices[i]) + "," + stage_name(trace.stages[i]);
        for (const double v : trace.values[i]) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), ",%.6f", v);
            csv += buf;
        }
        csv += "\n";
    }
    const std::string trace_path = cfg.out_dir + "/cell_trace_" + subject.subject_id + ".csv";
    write_text_file(trace_path, csv);
    std::cout << "analyze: wrote " << trace_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sleepscore: five-stage sleep scoring from single-channel EEG"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint_path;
    std::string out_path;
    std::string subject_id;
    std::string hyp_text_path;
    std::string hyp_svg_path;
    std::vector<std::int64_t> cells;
    std::uint64_t seed = 0;
    std::int64_t jobs = 0;
    std::int64_t folds = 0;
    std::string out_dir;
    std::string cache;
    bool strict = false;
    bool allow_train_overlap = false;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "declarative run configuration (json)")
            ->required();
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_option("--jobs", jobs, "worker thread override");
        cmd->add_option("--out-dir", out_dir, "artifact directory override");
        cmd->add_option("--cache", cache, "epoch cache override");
        return cmd;
    };

    CLI::App* prepare = add_common(app.add_subcommand(
        "prepare", "extract, harmonize and cache 30-s epochs from EDF recordings"));
    prepare->add_flag("--strict", strict, "treat any recording failure as fatal");

    CLI::App* pretrain_cmd = add_common(app.add_subcommand(
        "pretrain", "class-balanced pre-training of the CNN branches"));
    pretrain_cmd->add_option("--out", out_path, "checkpoint path");

    CLI::App* finetune_cmd = add_common(app.add_subcommand(
        "finetune", "sequential fine-tuning of the whole network"));
    finetune_cmd->add_option("--checkpoint", checkpoint_path, "pretrain checkpoint");
    finetune_cmd->add_option("--out", out_path, "checkpoint path");

    CLI::App* evaluate_cmd = add_common(app.add_subcommand(
        "evaluate", "k-fold cross-validation, or scoring against one checkpoint"));
    evaluate_cmd->add_option("--checkpoint", checkpoint_path,
                             "full checkpoint (omit to run cross-validation)");
    evaluate_cmd->add_option("--folds", folds, "fold count override");
    evaluate_cmd->add_flag("--allow-train-overlap", allow_train_overlap,
                           "permit scoring subjects the checkpoint was trained on");

    CLI::App* predict_cmd = add_common(app.add_subcommand(
        "predict", "per-epoch stage stream from a full checkpoint"));
    predict_cmd->add_option("--checkpoint", checkpoint_path, "full checkpoint")->required();
    predict_cmd->add_option("--subject", subject_id, "restrict to one subject");
    predict_cmd->add_option("--hypnogram-text", hyp_text_path, "text hypnogram output");
    predict_cmd->add_option("--hypnogram-svg", hyp_svg_path, "svg hypnogram output");

    CLI::App* analyze_cmd = add_common(app.add_subcommand(
        "analyze", "filter activation maps and forward-LSTM cell traces"));
    analyze_cmd->add_option("--checkpoint", checkpoint_path, "full checkpoint")->required();
    analyze_cmd->add_option("--subject", subject_id, "subject for the cell trace");
    analyze_cmd->add_option("--cells", cells, "forward-LSTM cell indices to trace");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_config(config_path);
        CLI::App* active = app.get_subcommands().front();
        const auto given = [&](const std::string& name) {
            const CLI::Option* o = active->get_option_no_throw(name);
            return o != nullptr && o->count() > 0;
        };
        if (given("--seed")) {
            cfg.seed = seed;
        }
        if (given("--jobs")) {
            cfg.jobs = jobs;
        }
        if (given("--folds")) {
            cfg.folds = folds;
        }
        if (given("--out-dir")) {
            cfg.out_dir = out_dir;
        }
        if (given("--cache")) {
            cfg.cache = cache;
        }

        if (prepare->parsed()) {
            return cmd_prepare(cfg, strict);
        }
        if (pretrain_cmd->parsed()) {
            return cmd_pretrain(cfg, out_path);
        }
        if (finetune_cmd->parsed()) {
            return cmd_finetune(cfg, checkpoint_path, out_path);
        }
        if (evaluate_cmd->parsed()) {
            return cmd_evaluate(cfg, checkpoint_path, allow_train_overlap);
        }
        if (predict_cmd->parsed()) {
            return cmd_predict(cfg, checkpoint_path, subject_id, hyp_text_path,
                               hyp_svg_path);
        }
        if (analyze_cmd->parsed()) {
            return cmd_analyze(cfg, checkpoint_path, subject_id, cells);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
