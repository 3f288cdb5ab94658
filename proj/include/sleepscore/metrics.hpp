#pragma once

// Scoring: confusion matrices, accuracy, per-class precision/recall/F1,
// macro-F1 and Cohen's kappa, plus table and CSV rendering.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sleepscore/dataset.hpp"

namespace sleepscore {

struct ConfusionMatrix {
    // rows = expert stage, columns = predicted stage
    std::array<std::array<std::int64_t, kNumStages>, kNumStages> counts{};

    void add(Stage expert, Stage predicted);
    void merge(const ConfusionMatrix& other);
    std::int64_t total() const;
    std::int64_t row_total(int stage) const;
    std::int64_t col_total(int stage) const;
};

ConfusionMatrix confusion(const std::vector<Stage>& expert,
                          const std::vector<Stage>& predicted);

struct ClassScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false;  // a zero denominator was coerced to 0
};

/// All rates are fractions in [0, 1]; rendering converts to percent.
struct MetricsReport {
    ConfusionMatrix matrix;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    double kappa = 0.0;
    bool kappa_defined = true;  // false when chance agreement is exactly 1
    std::array<ClassScore, kNumStages> per_class{};
};

double accuracy(const ConfusionMatrix& cm);
MetricsReport score(const ConfusionMatrix& cm);

std::string render_report(const MetricsReport& report);
std::string render_confusion_csv(const ConfusionMatrix& cm);

}  // namespace sleepscore
