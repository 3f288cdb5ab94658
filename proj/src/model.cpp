#include "sleepscore/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sleepscore {

ModelConfig make_config(std::int64_t fs) {
    if (fs < 16) {
        throw std::invalid_argument("model: sampling rate must be at least 16 Hz, got " +
                                    std::to_string(fs));
    }
    ModelConfig c;
    c.fs = fs;
    c.small.conv1_width = std::llround(static_cast<double>(fs) / 2.0);
    c.small.conv1_stride =
        std::max<std::int64_t>(1, std::llround(static_cast<double>(fs) / 16.0));
    c.small.pool1_size = 8;
    c.small.pool1_stride = 8;
    c.small.conv2_width = 8;
    c.small.pool2_size = 4;
    c.small.pool2_stride = 4;
    c.large.conv1_width = fs * 4;
    c.large.conv1_stride = std::llround(static_cast<double>(fs) / 2.0);
    c.large.pool1_size = 4;
    c.large.pool1_stride = 4;
    c.large.conv2_width = 6;
    c.large.pool2_size = 2;
    c.large.pool2_stride = 2;
    return c;
}

std::vector<std::int64_t> branch_out_lens(const BranchSpec& spec, std::int64_t epoch_len) {
    std::vector<std::int64_t> lens;
    std::int64_t len =
        conv1d_out_len(epoch_len, spec.conv1_width, spec.conv1_stride, Padding::Same);
    lens.push_back(len);
    len = pool1d_out_len(len, spec.pool1_stride);
    lens.push_back(len);
    for (int i = 0; i < 3; ++i) {
        len = conv1d_out_len(len, spec.conv2_width, 1, Padding::Same);
        lens.push_back(len);
    }
    len = pool1d_out_len(len, spec.pool2_stride);
    lens.push_back(len);
    return lens;
}

std::int64_t branch_feature_width(const BranchSpec& spec, std::int64_t epoch_len) {
    return branch_out_lens(spec, epoch_len).back() * spec.n_filters2;
}

namespace {

Branch build_branch(const BranchSpec& spec, Rng& rng) {
    Branch b;
    b.spec = spec;
    b.blocks.push_back(make_conv_block(spec.conv1_width, 1, spec.n_filters1,
                                       spec.conv1_stride, rng, true));
    std::int64_t in_ch = spec.n_filters1;
    for (int i = 0; i < 3; ++i) {
        b.blocks.push_back(make_conv_block(spec.conv2_width, in_ch, spec.n_filters2, 1, rng));
        in_ch = spec.n_filters2;
    }
    return b;
}

Tensor branch_forward(const Tensor& x, Branch& b, double p, Mode mode, Rng& rng) {
    Tensor y = conv_block_forward(x, b.blocks[0], mode);
    y = maxpool1d(y, b.spec.pool1_size, b.spec.pool1_stride);
    y = dropout(y, p, mode, rng);
    for (std::size_t i = 1; i < b.blocks.size(); ++i) {
        y = conv_block_forward(y, b.blocks[i], mode);
    }
    y = maxpool1d(y, b.spec.pool2_size, b.spec.pool2_stride);
    return reshape(y, {y.dim(0), y.dim(1) * y.dim(2)});
}

}  // namespace

SleepStageNet build(const ModelConfig& config, Rng& rng) {
    if (config.fs < 16) {
        throw std::invalid_argument("model: sampling rate must be at least 16 Hz, got " +
                                    std::to_string(config.fs));
    }
    if (config.shortcut_width != 2 * config.lstm_hidden) {
        throw std::invalid_argument(
            "model: shortcut width " + std::to_string(config.shortcut_width) +
            " must be twice the LSTM hidden size " + std::to_string(config.lstm_hidden));
    }
    const std::int64_t epoch_len = config.fs * 30;
    for (const auto* spec : {&config.small, &config.large}) {
        for (const std::int64_t len : branch_out_lens(*spec, epoch_len)) {
            if (len < 1) {
                throw std::invalid_argument("model: a branch layer collapses to length 0");
            }
        }
    }
    SleepStageNet m;
    m.config = config;
    m.small = build_branch(config.small, rng);
    m.large = build_branch(config.large, rng);
    m.feature_width = branch_feature_width(config.small, epoch_len) +
                      branch_feature_width(config.large, epoch_len);
    m.fwd_lstm = make_lstm_stack(m.feature_width, config.lstm_hidden, config.lstm_layers, rng);
    m.bwd_lstm = make_lstm_stack(m.feature_width, config.lstm_hidden, config.lstm_layers, rng);
    m.shortcut = make_dense_block(m.feature_width, config.shortcut_width, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.shortcut_width));
    m.out_w = Tensor::uniform({config.shortcut_width, config.n_classes}, -bound, bound, rng,
                              true);
    m.out_b = Tensor::zeros({config.n_classes}, true);
    reset_states(m, 1);
    return m;
}

Tensor featurize(SleepStageNet& model, const Tensor& epochs, Mode mode, Rng& rng) {
    const std::int64_t want = model.config.fs * 30;
    if (epochs.ndim() != 3 || epochs.dim(2) != 1) {
        throw std::invalid_argument("featurize: epochs must be [batch, " +
                                    std::to_string(want) + ", 1], got " +
                                    shape_str(epochs.shape()));
    }
    if (epochs.dim(1) != want) {
        throw std::invalid_argument("featurize: epoch length must be fs*30 = " +
                                    std::to_string(want) + ", got " +
                                    std::to_string(epochs.dim(1)));
    }
    Tensor s = branch_forward(epochs, model.small, model.config.dropout_p, mode, rng);
    Tensor l = branch_forward(epochs, model.large, model.config.dropout_p, mode, rng);
    return dropout(concat({s, l}, 1), model.config.dropout_p, mode, rng);
}

Tensor branch_conv1(SleepStageNet& model, const Tensor& epochs, bool large_branch, Mode mode) {
    Branch& b = large_branch ? model.large : model.small;
    return conv_block_forward(epochs, b.blocks[0], mode);
}

std::vector<Tensor> sequence_pass(SleepStageNet& model, const std::vector<Tensor>& features,
                                  Mode mode, Rng& rng) {
    if (features.empty()) {
        throw std::invalid_argument("sequence_pass: empty feature sequence");
    }
    const std::int64_t lanes = features[0].dim(0);
    for (const auto& f : features) {
        if (f.ndim() != 2 || f.dim(1) != model.feature_width || f.dim(0) != lanes) {
            throw std::invalid_argument("sequence_pass: features must be [" +
                                        std::to_string(lanes) + "," +
                                        std::to_string(model.feature_width) + "], got " +
                                        shape_str(f.shape()));
        }
    }
    if (model.fwd_state.layers[0].h.dim(0) != lanes) {
        throw std::invalid_argument("sequence_pass: states hold " +
                                    std::to_string(model.fwd_state.layers[0].h.dim(0)) +
                                    " lanes but features carry " + std::to_string(lanes));
    }
    // shortcut statistics are pooled over batch and time jointly
    Tensor stacked = features.size() == 1 ? features[0] : concat(features, 0);
    Tensor sc = dense(stacked, model.shortcut, mode);
    std::vector<Tensor> lstm_out =
        bilstm_forward(features, model.fwd_lstm, model.bwd_lstm, model.fwd_state,
                       model.bwd_state, mode, model.config.dropout_p, rng);
    std::vector<Tensor> logits;
    logits.reserve(features.size());
    for (std::size_t t = 0; t < features.size(); ++t) {
        Tensor o = add(lstm_out[t],
                       slice_rows(sc, static_cast<std::int64_t>(t) * lanes, lanes));
        o = dropout(o, model.config.dropout_p, mode, rng);
        logits.push_back(add_rowvec(matmul(o, model.out_w), model.out_b));
    }
    return logits;
}

Tensor sequence_logits(SleepStageNet& model, const Tensor& features, Mode mode, Rng& rng) {
    if (features.ndim() != 2) {
        throw std::invalid_argument("sequence_logits: features must be [seq, D], got " +
                                    shape_str(features.shape()));
    }
    std::vector<Tensor> steps;
    steps.reserve(static_cast<std::size_t>(features.dim(0)));
    for (std::int64_t t = 0; t < features.dim(0); ++t) {
        steps.push_back(slice_rows(features, t, 1));
    }
    return concat(sequence_pass(model, steps, mode, rng), 0);
}

void reset_states(SleepStageNet& model, std::int64_t lanes) {
    model.fwd_state = zero_stack_state(model.fwd_lstm, lanes);
    model.bwd_state = zero_stack_state(model.bwd_lstm, lanes);
}

namespace {

Tensor gather_rows(const Tensor& t, const std::vector<std::int64_t>& rows) {
    const std::int64_t width = t.dim(1);
    std::vector<double> values;
    values.reserve(rows.size() * static_cast<std::size_t>(width));
    for (const std::int64_t r : rows) {
        if (r < 0 || r >= t.dim(0)) {
            throw std::invalid_argument("select_state_lanes: row " + std::to_string(r) +
                                        " out of range for " + shape_str(t.shape()));
        }
        const auto v = t.values();
        values.insert(values.end(), v.begin() + r * width, v.begin() + (r + 1) * width);
    }
    return Tensor({static_cast<std::int64_t>(rows.size()), width}, std::move(values));
}

}  // namespace

void select_state_lanes(SleepStageNet& model, const std::vector<std::int64_t>& rows) {
    if (rows.empty()) {
        throw std::invalid_argument("select_state_lanes: empty row set");
    }
    for (auto* state : {&model.fwd_state, &model.bwd_state}) {
        for (auto& layer : state->layers) {
            layer.h = gather_rows(layer.h, rows);
            layer.c = gather_rows(layer.c, rows);
        }
    }
}

Tensor epochs_to_tensor(const std::vector<const EpochRecord*>& epochs, std::int64_t fs) {
    if (epochs.empty()) {
        throw std::invalid_argument("epochs_to_tensor: empty batch");
    }
    const std::int64_t len = fs * 30;
    std::vector<double> values;
    values.reserve(epochs.size() * static_cast<std::size_t>(len));
    for (const EpochRecord* e : epochs) {
        if (static_cast<std::int64_t>(e->samples.size()) != len) {
            throw std::invalid_argument("epochs_to_tensor: epoch " +
                                        std::to_string(e->epoch_index) + " has " +
                                        std::to_string(e->samples.size()) +
                                        " samples, expected " + std::to_string(len));
        }
        values.insert(values.end(), e->samples.begin(), e->samples.end());
    }
    return Tensor({static_cast<std::int64_t>(epochs.size()), len, 1}, std::move(values));
}

std::vector<Prediction> predict(SleepStageNet& model, const SubjectRecording& subject,
                                Rng& rng) {
    if (subject.epochs.empty()) {
        throw std::invalid_argument("predict: subject " + subject.subject_id +
                                    " has no epochs");
    }
    if (subject.fs != model.config.fs) {
        throw std::invalid_argument("predict: subject sampled at " +
                                    std::to_string(subject.fs) + " Hz but the model expects " +
                                    std::to_string(model.config.fs));
    }
    reset_states(model, 1);
    std::vector<Prediction> out;
    out.reserve(subject.epochs.size());
    const std::int64_t n = static_cast<std::int64_t>(subject.epochs.size());
    for (std::int64_t w = 0; w < n; w += model.config.seq_length) {
        const std::int64_t len = std::min(model.config.seq_length, n - w);
        std::vector<const EpochRecord*> batch;
        batch.reserve(static_cast<std::size_t>(len));
        for (std::int64_t t = 0; t < len; ++t) {
            batch.push_back(&subject.epochs[static_cast<std::size_t>(w + t)]);
        }
        Tensor feats =
            featurize(model, epochs_to_tensor(batch, model.config.fs), Mode::Eval, rng);
        Tensor logits = sequence_logits(model, feats, Mode::Eval, rng);
        for (std::int64_t t = 0; t < len; ++t) {
            const auto row = logits.values().subspan(
                static_cast<std::size_t>(t * model.config.n_classes),
                static_cast<std::size_t>(model.config.n_classes));
            Prediction p;
            p.epoch_index = subject.epochs[static_cast<std::size_t>(w + t)].epoch_index;
            double mx = row[0];
            for (int c = 1; c < kNumStages; ++c) {
                mx = std::max(mx, row[static_cast<std::size_t>(c)]);
            }
            double z = 0.0;
            for (int c = 0; c < kNumStages; ++c) {
                p.probs[static_cast<std::size_t>(c)] =
                    std::exp(row[static_cast<std::size_t>(c)] - mx);
                z += p.probs[static_cast<std::size_t>(c)];
            }
            int best = 0;
            for (int c = 0; c < kNumStages; ++c) {
                p.probs[static_cast<std::size_t>(c)] /= z;
                if (p.probs[static_cast<std::size_t>(c)] > p.probs[static_cast<std::size_t>(best)]) {
                    best = c;
                }
            }
            p.stage = static_cast<Stage>(best);
            out.push_back(p);
        }
    }
    return out;
}

namespace {

void add_bn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
            BatchNormState& bn) {
    out.emplace_back(prefix + ".bn.gamma", bn.gamma);
    out.emplace_back(prefix + ".bn.beta", bn.beta);
}

void add_branch(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                Branch& b) {
    for (std::size_t i = 0; i < b.blocks.size(); ++i) {
        const std::string name =
            prefix + (i == 0 ? ".conv1" : ".conv2_" + std::to_string(i));
        out.emplace_back(name + ".filters", b.blocks[i].filters);
        add_bn(out, name, b.blocks[i].bn);
    }
}

void add_lstm(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
              LstmStackParams& stack) {
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const std::string name = prefix + ".l" + std::to_string(l);
        PeepholeLstmParams& p = stack.layers[l];
        out.emplace_back(name + ".w_i", p.w_i);
        out.emplace_back(name + ".w_f", p.w_f);
        out.emplace_back(name + ".w_g", p.w_g);
        out.emplace_back(name + ".w_o", p.w_o);
        out.emplace_back(name + ".u_i", p.u_i);
        out.emplace_back(name + ".u_f", p.u_f);
        out.emplace_back(name + ".u_g", p.u_g);
        out.emplace_back(name + ".u_o", p.u_o);
        out.emplace_back(name + ".p_i", p.p_i);
        out.emplace_back(name + ".p_f", p.p_f);
        out.emplace_back(name + ".p_o", p.p_o);
        out.emplace_back(name + ".b_i", p.b_i);
        out.emplace_back(name + ".b_f", p.b_f);
        out.emplace_back(name + ".b_g", p.b_g);
        out.emplace_back(name + ".b_o", p.b_o);
    }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> named_params(SleepStageNet& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    add_branch(out, "small", model.small);
    add_branch(out, "large", model.large);
    add_lstm(out, "lstm.fwd", model.fwd_lstm);
    add_lstm(out, "lstm.bwd", model.bwd_lstm);
    out.emplace_back("shortcut.weights", model.shortcut.weights);
    add_bn(out, "shortcut", model.shortcut.bn);
    out.emplace_back("out.w", model.out_w);
    out.emplace_back("out.b", model.out_b);
    return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> named_stats(SleepStageNet& model) {
    std::vector<std::pair<std::string, std::vector<double>*>> out;
    const auto add = [&out](const std::string& prefix, BatchNormState& bn) {
        out.emplace_back(prefix + ".bn.moving_mean", &bn.moving_mean);
        out.emplace_back(prefix + ".bn.moving_var", &bn.moving_var);
    };
    for (auto* branch : {&model.small, &model.large}) {
        const std::string prefix = branch == &model.small ? "small" : "large";
        for (std::size_t i = 0; i < branch->blocks.size(); ++i) {
            add(prefix + (i == 0 ? ".conv1" : ".conv2_" + std::to_string(i)),
                branch->blocks[i].bn);
        }
    }
    add("shortcut", model.shortcut.bn);
    return out;
}

bool is_cnn_param(const std::string& name) {
    return name.rfind("small.", 0) == 0 || name.rfind("large.", 0) == 0;
}

std::vector<Tensor> decay_params(SleepStageNet& model) {
    return {model.small.blocks[0].filters, model.large.blocks[0].filters};
}

}  // namespace sleepscore
