#include "sleepscore/metrics.hpp"

#include <cstdarg>
#include <cstdio>
#include <stdexcept>

namespace sleepscore {

void ConfusionMatrix::add(Stage expert, Stage predicted) {
    counts[static_cast<std::size_t>(expert)][static_cast<std::size_t>(predicted)]++;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    for (int r = 0; r < kNumStages; ++r) {
        for (int c = 0; c < kNumStages; ++c) {
            counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] +=
                other.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        }
    }
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t n = 0;
    for (const auto& row : counts) {
        for (const auto v : row) {
            n += v;
        }
    }
    return n;
}

std::int64_t ConfusionMatrix::row_total(int stage) const {
    std::int64_t n = 0;
    for (const auto v : counts[static_cast<std::size_t>(stage)]) {
        n += v;
    }
    return n;
}

std::int64_t ConfusionMatrix::col_total(int stage) const {
    std::int64_t n = 0;
    for (const auto& row : counts) {
        n += row[static_cast<std::size_t>(stage)];
    }
    return n;
}

ConfusionMatrix confusion(const std::vector<Stage>& expert,
                          const std::vector<Stage>& predicted) {
    if (expert.size() != predicted.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(expert.size()) +
                                    " expert labels vs " + std::to_string(predicted.size()) +
                                    " predictions");
    }
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < expert.size(); ++i) {
        cm.add(expert[i], predicted[i]);
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    const std::int64_t n = cm.total();
    if (n == 0) {
        throw std::invalid_argument("metrics: empty confusion matrix");
    }
    std::int64_t diag = 0;
    for (int c = 0; c < kNumStages; ++c) {
        diag += cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    }
    return static_cast<double>(diag) / static_cast<double>(n);
}

MetricsReport score(const ConfusionMatrix& cm) {
    MetricsReport r;
    r.matrix = cm;
    r.accuracy = accuracy(cm);
    const std::int64_t n = cm.total();

    double f1_sum = 0.0;
    for (int c = 0; c < kNumStages; ++c) {
        ClassScore& s = r.per_class[static_cast<std::size_t>(c)];
        const auto tp = static_cast<double>(
            cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]);
        const std::int64_t col = cm.col_total(c);
        const std::int64_t row = cm.row_total(c);
        if (col == 0) {
            s.degenerate = true;
        } else {
            s.precision = tp / static_cast<double>(col);
        }
        if (row == 0) {
            s.degenerate = true;
        } else {
            s.recall = tp / static_cast<double>(row);
        }
        if (s.precision + s.recall > 0.0) {
            s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
        } else {
            s.degenerate = true;
        }
        f1_sum += s.f1;
    }
    r.macro_f1 = f1_sum / kNumStages;

    std::int64_t chance = 0;
    for (int c = 0; c < kNumStages; ++c) {
        chance += cm.row_total(c) * cm.col_total(c);
    }
    const double p_e = static_cast<double>(chance) /
                       (static_cast<double>(n) * static_cast<double>(n));
    if (p_e >= 1.0) {
        r.kappa_defined = false;
        r.kappa = 0.0;
    } else {
        r.kappa = (r.accuracy - p_e) / (1.0 - p_e);
    }
    return r;
}

namespace {

void append_fmt(std::string& out, const char* fmt, ...) {
    char buf[256];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    out += buf;
}

}  // namespace

std::string render_report(const MetricsReport& r) {
    std::string out;
    append_fmt(out, "%-5s", "");
    for (int c = 0; c < kNumStages; ++c) {
        append_fmt(out, "%9s", stage_name(static_cast<Stage>(c)).c_str());
    }
    append_fmt(out, "%9s%9s%9s\n", "PR%", "RE%", "F1%");
    bool any_degenerate = false;
    for (int row = 0; row < kNumStages; ++row) {
        append_fmt(out, "%-5s", stage_name(static_cast<Stage>(row)).c_str());
        for (int col = 0; col < kNumStages; ++col) {
            append_fmt(out, "%9lld",
                       static_cast<long long>(
                           r.matrix.counts[static_cast<std::size_t>(row)]
                                          [static_cast<std::size_t>(col)]));
        }
        const ClassScore& s = r.per_class[static_cast<std::size_t>(row)];
        append_fmt(out, "%9.2f%9.2f%9.2f%s\n", 100.0 * s.precision, 100.0 * s.recall,
                   100.0 * s.f1, s.degenerate ? " *" : "");
        any_degenerate = any_degenerate || s.degenerate;
    }
    append_fmt(out, "epochs %lld  accuracy %.2f%%  macro-F1 %.2f%%  ",
               static_cast<long long>(r.matrix.total()), 100.0 * r.accuracy,
               100.0 * r.macro_f1);
    if (r.kappa_defined) {
        append_fmt(out, "kappa %.4f\n", r.kappa);
    } else {
        out += "kappa undefined\n";
    }
    if (any_degenerate) {
        out += "* zero-denominator stage, coerced to 0\n";
    }
    return out;
}

std::string render_confusion_csv(const ConfusionMatrix& cm) {
    std::string out;
    for (int c = 0; c < kNumStages; ++c) {
        out += ",";
        out += stage_name(static_cast<Stage>(c));
    }
    out += "\n";
    for (int row = 0; row < kNumStages; ++row) {
        out += stage_name(static_cast<Stage>(row));
        for (int col = 0; col < kNumStages; ++col) {
            out += "," + std::to_string(cm.counts[static_cast<std::size_t>(row)]
                                                 [static_cast<std::size_t>(col)]);
        }
        out += "\n";
    }
    return out;
}

}  // namespace sleepscore
