// Python bindings for the core pipeline: model construction and scoring,
// checkpoints, EDF access, metrics and hypnograms.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sleepscore/checkpoint.hpp"
#include "sleepscore/dataset.hpp"
#include "sleepscore/edf.hpp"
#include "sleepscore/hypnogram.hpp"
#include "sleepscore/metrics.hpp"
#include "sleepscore/model.hpp"
#include "sleepscore/rng.hpp"
#include "sleepscore/tensor.hpp"

namespace py = pybind11;
using namespace sleepscore;

namespace {

std::vector<Stage> to_stages(const std::vector<int>& raw) {
    std::vector<Stage> out;
    out.reserve(raw.size());
    for (const int v : raw) {
        if (v < 0 || v >= kNumStages) {
            throw std::invalid_argument("stage index " + std::to_string(v) +
                                        " outside [0, 5)");
        }
        out.push_back(static_cast<Stage>(v));
    }
    return out;
}

// Rows of a [n, fs*30] float array as one-epoch records.
SubjectRecording to_recording(const py::array_t<double>& epochs, std::int64_t fs,
                              const std::string& id) {
    const auto buf = epochs.unchecked<2>();
    if (buf.shape(1) != fs * 30) {
        throw std::invalid_argument("epochs must be [n, fs*30] = [n, " +
                                    std::to_string(fs * 30) + "], got columns " +
                                    std::to_string(buf.shape(1)));
    }
    SubjectRecording rec;
    rec.subject_id = id;
    rec.fs = fs;
    for (py::ssize_t i = 0; i < buf.shape(0); ++i) {
        EpochRecord e;
        e.epoch_index = static_cast<std::int64_t>(i);
        e.label = Stage::Wake;  // placeholder, scoring ignores it
        e.samples.resize(static_cast<std::size_t>(buf.shape(1)));
        for (py::ssize_t j = 0; j < buf.shape(1); ++j) {
            e.samples[static_cast<std::size_t>(j)] = buf(i, j);
        }
        rec.epochs.push_back(std::move(e));
    }
    return rec;
}

struct Model {
    SleepStageNet net;

    explicit Model(const ModelConfig& config, std::uint64_t seed) {
        Rng rng(seed);
        net = build(config, rng);
    }
    explicit Model(SleepStageNet n) : net(std::move(n)) {}

    py::array_t<double> featurize_epochs(const py::array_t<double>& epochs) {
        const SubjectRecording rec = to_recording(epochs, net.config.fs, "py");
        std::vector<const EpochRecord*> ptrs;
        for (const auto& e : rec.epochs) {
            ptrs.push_back(&e);
        }
        Rng rng(0);
        const Tensor feats =
            featurize(net, epochs_to_tensor(ptrs, net.config.fs), Mode::Eval, rng);
        py::array_t<double> out({feats.dim(0), feats.dim(1)});
        auto w = out.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < w.shape(0); ++i) {
            for (py::ssize_t j = 0; j < w.shape(1); ++j) {
                w(i, j) = feats.values()[static_cast<std::size_t>(i * feats.dim(1) + j)];
            }
        }
        return out;
    }

    py::tuple predict_epochs(const py::array_t<double>& epochs) {
        const SubjectRecording rec = to_recording(epochs, net.config.fs, "py");
        Rng rng(0);
        const auto preds = predict(net, rec, rng);
        std::vector<int> stages;
        py::array_t<double> probs(
            {static_cast<py::ssize_t>(preds.size()), static_cast<py::ssize_t>(kNumStages)});
        auto w = probs.mutable_unchecked<2>();
        for (std::size_t i = 0; i < preds.size(); ++i) {
            stages.push_back(static_cast<int>(preds[i].stage));
            for (int k = 0; k < kNumStages; ++k) {
                w(static_cast<py::ssize_t>(i), k) =
                    preds[i].probs[static_cast<std::size_t>(k)];
            }
        }
        return py::make_tuple(stages, probs);
    }

    void save(const std::string& path) {
        CheckpointMeta meta;
        meta.phase = "finetune";
        save_checkpoint(path, snapshot(net, meta));
    }
};

py::dict score_stages(const std::vector<int>& expert, const std::vector<int>& predicted) {
    const MetricsReport r = score(confusion(to_stages(expert), to_stages(predicted)));
    py::dict out;
    out["accuracy"] = r.accuracy;
    out["macro_f1"] = r.macro_f1;
    out["kappa"] = r.kappa_defined ? py::cast(r.kappa) : py::none();
    py::list per_class;
    for (int s = 0; s < kNumStages; ++s) {
        const ClassScore& c = r.per_class[static_cast<std::size_t>(s)];
        py::dict d;
        d["stage"] = stage_name(static_cast<Stage>(s));
        d["precision"] = c.precision;
        d["recall"] = c.recall;
        d["f1"] = c.f1;
        d["degenerate"] = c.degenerate;
        per_class.append(d);
    }
    out["per_class"] = per_class;
    py::list matrix;
    for (int i = 0; i < kNumStages; ++i) {
        py::list row;
        for (int j = 0; j < kNumStages; ++j) {
            row.append(r.matrix.counts[static_cast<std::size_t>(i)]
                                      [static_cast<std::size_t>(j)]);
        }
        matrix.append(row);
    }
    out["confusion"] = matrix;
    return out;
}

py::tuple read_edf_channel(const std::string& path, const std::string& channel) {
    const EdfFile file = read_edf_file(path);
    const std::vector<double> signal = select_channel(file, channel);
    const std::string primary = channel.substr(0, channel.find(':'));
    std::size_t index = 0;
    while (index < file.header.signals.size() &&
           file.header.signals[index].label != primary) {
        ++index;
    }
    py::array_t<double> out(static_cast<py::ssize_t>(signal.size()));
    auto w = out.mutable_unchecked<1>();
    for (std::size_t i = 0; i < signal.size(); ++i) {
        w(static_cast<py::ssize_t>(i)) = signal[i];
    }
    return py::make_tuple(out, signal_fs(file, index));
}

std::vector<std::tuple<double, double, std::string>> read_edf_annotations(
    const std::string& path) {
    const EdfFile file = read_edf_file(path);
    std::vector<std::tuple<double, double, std::string>> out;
    for (std::size_t s = 0; s < file.header.signals.size(); ++s) {
        if (file.header.signals[s].label != "EDF Annotations") {
            continue;
        }
        for (const Annotation& a : parse_edfplus_annotations(file, s)) {
            out.emplace_back(a.onset_s, a.duration_s, a.label);
        }
    }
    return out;
}

std::vector<int> parse_hypnogram(const std::string& text) {
    std::vector<int> out;
    for (const Stage s : parse_hypnogram_text(text)) {
        out.push_back(static_cast<int>(s));
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Sleep-stage scoring: two-branch CNN + bidirectional LSTM over raw "
              "single-channel EEG epochs";

    py::class_<ModelConfig>(m, "Config")
        .def_readwrite("fs", &ModelConfig::fs)
        .def_readwrite("n_classes", &ModelConfig::n_classes)
        .def_readwrite("lstm_hidden", &ModelConfig::lstm_hidden)
        .def_readwrite("lstm_layers", &ModelConfig::lstm_layers)
        .def_readwrite("shortcut_width", &ModelConfig::shortcut_width)
        .def_readwrite("seq_length", &ModelConfig::seq_length)
        .def_readwrite("dropout_p", &ModelConfig::dropout_p);

    m.def("make_config", &make_config, py::arg("fs"),
          "Branch geometry derived from the sampling rate");

    py::class_<Model>(m, "Model")
        .def(py::init<const ModelConfig&, std::uint64_t>(), py::arg("config"),
             py::arg("seed") = 0)
        .def_property_readonly("config", [](const Model& m_) { return m_.net.config; })
        .def_property_readonly("feature_width",
                               [](const Model& m_) { return m_.net.feature_width; })
        .def("featurize", &Model::featurize_epochs, py::arg("epochs"),
             "CNN features for [n, fs*30] epochs, eval mode")
        .def("predict", &Model::predict_epochs, py::arg("epochs"),
             "Stage indices and [n, 5] softmax probabilities for [n, fs*30] epochs")
        .def("save", &Model::save, py::arg("path"));

    m.def(
        "load_model",
        [](const std::string& path) { return Model(restore(load_checkpoint(path))); },
        py::arg("path"), "Rebuild a model from a full checkpoint");

    m.def("score", &score_stages, py::arg("expert"), py::arg("predicted"),
          "Accuracy, macro F1, kappa, per-class scores and the confusion matrix");
    m.def("stage_names", [] {
        std::vector<std::string> names;
        for (int s = 0; s < kNumStages; ++s) {
            names.push_back(stage_name(static_cast<Stage>(s)));
        }
        return names;
    });

    m.def("read_edf_channel", &read_edf_channel, py::arg("path"), py::arg("channel"),
          "Physical samples and sampling rate of one channel (or 'A:B' montage)");
    m.def("read_edf_annotations", &read_edf_annotations, py::arg("path"),
          "(onset_s, duration_s, label) tuples from every annotation signal");

    m.def(
        "hypnogram_text",
        [](const std::vector<int>& stages) { return hypnogram_text(to_stages(stages)); },
        py::arg("stages"));
    m.def("parse_hypnogram", &parse_hypnogram, py::arg("text"));
    m.def(
        "hypnogram_svg",
        [](const std::vector<int>& stages) { return hypnogram_svg(to_stages(stages)); },
        py::arg("stages"));
}
