#include "sleepscore/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "sleepscore/nn.hpp"

namespace sleepscore {

namespace {

FoldResult run_fold(const std::vector<SubjectRecording>& subjects,
                    const std::vector<std::int64_t>& test_indices, std::int64_t fold,
                    const CvOptions& options, Rng& rng, const FoldSink& sink,
                    std::mutex& sink_mutex) {
    std::vector<const SubjectRecording*> train;
    std::vector<const SubjectRecording*> test;
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(subjects.size()); ++i) {
        const bool held_out = std::find(test_indices.begin(), test_indices.end(), i) !=
                              test_indices.end();
        (held_out ? test : train).push_back(&subjects[static_cast<std::size_t>(i)]);
    }
    if (train.empty()) {
        throw std::invalid_argument("no training subjects left");
    }

    FoldResult result;
    result.fold = fold;
    for (const auto* s : test) {
        result.test_subjects.push_back(s->subject_id);
    }

    SleepStageNet model = build(options.config, rng);

    std::vector<const EpochRecord*> pool;
    std::vector<Stage> labels;
    for (const auto* s : train) {
        for (const auto& e : s->epochs) {
            pool.push_back(&e);
            labels.push_back(e.label);
        }
    }
    std::vector<const EpochRecord*> balanced;
    for (const std::int64_t idx : oversample_indices(labels, rng)) {
        balanced.push_back(pool[static_cast<std::size_t>(idx)]);
    }

    const auto hook = [&result](const StepLog& log) { result.logs.push_back(log); };
    const PretrainResult pre = pretrain(model, balanced, options.plan, rng, hook);
    finetune(model, pre.cnn, train, options.plan, rng, hook);

    for (const auto* s : test) {
        std::vector<Prediction> preds = predict(model, *s, rng);
        std::vector<Stage> expert, predicted;
        expert.reserve(preds.size());
        predicted.reserve(preds.size());
        for (std::size_t j = 0; j < preds.size(); ++j) {
            expert.push_back(s->epochs[j].label);
            predicted.push_back(preds[j].stage);
        }
        result.confusion.merge(confusion(expert, predicted));
        result.predictions.emplace_back(s->subject_id, std::move(preds));
    }

    if (sink) {
        std::lock_guard<std::mutex> lock(sink_mutex);
        sink(result, model);
    }
    return result;
}

}  // namespace

CvResult run_cv(const std::vector<SubjectRecording>& subjects, const CvOptions& options,
                const FoldSink& sink) {
    if (options.folds < 2) {
        throw std::invalid_argument("run_cv: needs at least 2 folds, got " +
                                    std::to_string(options.folds));
    }
    validate(options.plan);
    const std::int64_t n = static_cast<std::int64_t>(subjects.size());
    const auto folds = split_folds(n, options.folds);

    // One generator per fold, forked up front so worker scheduling cannot
    // change any fold's stream.
    Rng root(options.seed);
    std::vector<Rng> fold_rngs;
    fold_rngs.reserve(folds.size());
    for (std::size_t i = 0; i < folds.size(); ++i) {
        fold_rngs.push_back(root.fork(i));
    }

    CvResult result;
    result.folds.resize(folds.size());
    std::vector<char> done(folds.size(), 0);

    std::atomic<std::int64_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex error_mutex;
    std::mutex sink_mutex;
    std::string error_text;

    const auto worker = [&] {
        while (!failed.load()) {
            const std::int64_t i = next.fetch_add(1);
            if (i >= static_cast<std::int64_t>(folds.size())) {
                return;
            }
            try {
                result.folds[static_cast<std::size_t>(i)] =
                    run_fold(subjects, folds[static_cast<std::size_t>(i)], i, options,
                             fold_rngs[static_cast<std::size_t>(i)], sink, sink_mutex);
                done[static_cast<std::size_t>(i)] = 1;
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!failed.exchange(true)) {
                    error_text = "run_cv: fold " + std::to_string(i) + ": " + e.what();
                }
            }
        }
    };

    const std::int64_t jobs =
        std::clamp<std::int64_t>(options.jobs, 1, static_cast<std::int64_t>(folds.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(jobs));
        for (std::int64_t j = 0; j < jobs; ++j) {
            threads.emplace_back(worker);
        }
        for (auto& t : threads) {
            t.join();
        }
    }
    if (failed.load()) {
        throw std::runtime_error(error_text);
    }

    for (std::size_t i = 0; i < result.folds.size(); ++i) {
        if (!done[i]) {
            throw std::runtime_error("run_cv: fold " + std::to_string(i) + " never ran");
        }
        result.pooled.merge(result.folds[i].confusion);
    }
    result.report = score(result.pooled);
    return result;
}

FilterActivationMap filter_activations(SleepStageNet& model,
                                       const std::vector<const EpochRecord*>& epochs,
                                       const std::vector<Stage>& predictions,
                                       bool large_branch) {
    if (predictions.empty()) {
        throw std::invalid_argument("filter_activations: no predictions");
    }
    if (predictions.size() != epochs.size()) {
        throw std::invalid_argument("filter_activations: " + std::to_string(epochs.size()) +
                                    " epochs but " + std::to_string(predictions.size()) +
                                    " predictions");
    }
    const std::int64_t n_filters =
        (large_branch ? model.large : model.small).spec.n_filters1;

    // Per-epoch time-summed activation per filter, grouped by predicted stage.
    std::vector<std::vector<std::vector<double>>> groups(kNumStages);
    const std::int64_t chunk = 64;
    const std::int64_t n = static_cast<std::int64_t>(epochs.size());
    for (std::int64_t start = 0; start < n; start += chunk) {
        const std::int64_t len = std::min(chunk, n - start);
        std::vector<const EpochRecord*> batch(
            epochs.begin() + start, epochs.begin() + start + len);
        const Tensor z = branch_conv1(model, epochs_to_tensor(batch, model.config.fs),
                                      large_branch, Mode::Eval);
        const std::int64_t steps = z.dim(1);
        const auto v = z.values();
        for (std::int64_t i = 0; i < len; ++i) {
            std::vector<double> summed(static_cast<std::size_t>(n_filters), 0.0);
            const std::size_t base =
                static_cast<std::size_t>(i * steps * n_filters);
            for (std::int64_t j = 0; j < steps; ++j) {
                for (std::int64_t k = 0; k < n_filters; ++k) {
                    summed[static_cast<std::size_t>(k)] +=
                        v[base + static_cast<std::size_t>(j * n_filters + k)];
                }
            }
            const int c = static_cast<int>(predictions[static_cast<std::size_t>(start + i)]);
            groups[static_cast<std::size_t>(c)].push_back(std::move(summed));
        }
    }

    FilterActivationMap map;
    map.large_branch = large_branch;
    map.u.assign(kNumStages, std::vector<double>(static_cast<std::size_t>(n_filters), 0.0));
    for (int c = 0; c < kNumStages; ++c) {
        auto& group = groups[static_cast<std::size_t>(c)];
        if (group.empty()) {
            map.empty[static_cast<std::size_t>(c)] = true;
            continue;
        }
        auto& row = map.u[static_cast<std::size_t>(c)];
        std::vector<double> column(group.size());
        for (std::int64_t k = 0; k < n_filters; ++k) {
            for (std::size_t i = 0; i < group.size(); ++i) {
                column[i] = group[i][static_cast<std::size_t>(k)];
            }
            // canonical order makes the mean independent of epoch order
            std::sort(column.begin(), column.end());
            double sum = 0.0;
            for (const double x : column) {
                sum += x;
            }
            row[static_cast<std::size_t>(k)] = sum / static_cast<double>(group.size());
        }
        const auto [lo_it, hi_it] = std::minmax_element(row.begin(), row.end());
        const double lo = *lo_it;
        const double span = *hi_it - lo;
        for (auto& x : row) {
            x = span > 0.0 ? (x - lo) / span : 0.0;
        }
    }
    return map;
}

CellTrace cell_trace(SleepStageNet& model, const SubjectRecording& subject,
                     const std::vector<std::int64_t>& cells, Rng& rng) {
    for (const std::int64_t c : cells) {
        if (c < 0 || c >= model.config.lstm_hidden) {
            throw std::invalid_argument("cell_trace: cell " + std::to_string(c) +
                                        " out of range, the forward LSTM has " +
                                        std::to_string(model.config.lstm_hidden) + " cells");
        }
    }
    CellTrace trace;
    trace.cells = cells;
    for (const Prediction& p : predict(model, subject, rng)) {
        trace.epoch_indices.push_back(p.epoch_index);
        trace.stages.push_back(p.stage);
    }

    LstmStackState state = zero_stack_state(model.fwd_lstm, 1);
    const std::int64_t n = static_cast<std::int64_t>(subject.epochs.size());
    for (std::int64_t w = 0; w < n; w += model.config.seq_length) {
        const std::int64_t len = std::min(model.config.seq_length, n - w);
        std::vector<const EpochRecord*> batch;
        for (std::int64_t t = 0; t < len; ++t) {
            batch.push_back(&subject.epochs[static_cast<std::size_t>(w + t)]);
        }
        const Tensor feats =
            featurize(model, epochs_to_tensor(batch, model.config.fs), Mode::Eval, rng);
        for (std::int64_t t = 0; t < len; ++t) {
            Tensor input = slice_rows(feats, t, 1);
            for (std::size_t l = 0; l < model.fwd_lstm.layers.size(); ++l) {
                const LstmStep step = lstm_step(input, state.layers[l],
                                                model.fwd_lstm.layers[l]);
                state.layers[l] = LstmState{step.h.detached(), step.c.detached()};
                input = step.h;
            }
            const auto cv = state.layers.back().c.values();
            std::vector<double> row;
            row.reserve(cells.size());
            for (const std::int64_t c : cells) {
                row.push_back(std::tanh(cv[static_cast<std::size_t>(c)]));
            }
            trace.values.push_back(std::move(row));
        }
    }
    return trace;
}

}  // namespace sleepscore
