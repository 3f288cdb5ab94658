#include "sleepscore/hypnogram.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace sleepscore {

namespace {

constexpr char kStageChar[kNumStages] = {'W', '1', '2', '3', 'R'};

// top-to-bottom plot rows: W, REM, N1, N2, N3
constexpr int kStageRow[kNumStages] = {0, 2, 3, 4, 1};
const char* const kRowLabel[kNumStages] = {"W", "REM", "N1", "N2", "N3"};

constexpr double kLeft = 64.0;
constexpr double kTop = 24.0;
constexpr double kPlotW = 960.0;
constexpr double kPlotH = 200.0;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

double row_y(int row) {
    return kTop + kPlotH * static_cast<double>(row) / (kNumStages - 1);
}

}  // namespace

std::string hypnogram_text(const std::vector<Stage>& stages) {
    std::string out;
    out.reserve(stages.size());
    for (const Stage s : stages) {
        out.push_back(kStageChar[static_cast<int>(s)]);
    }
    return out;
}

std::vector<Stage> parse_hypnogram_text(const std::string& text) {
    std::vector<Stage> out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        int stage = -1;
        for (int s = 0; s < kNumStages; ++s) {
            if (kStageChar[s] == c) {
                stage = s;
            }
        }
        if (stage < 0) {
            throw std::invalid_argument("hypnogram: unknown stage character '" +
                                        std::string(1, c) + "' at position " +
                                        std::to_string(i));
        }
        out.push_back(static_cast<Stage>(stage));
    }
    return out;
}

std::string hypnogram_svg(const std::vector<Stage>& stages) {
    if (stages.empty()) {
        throw std::invalid_argument("hypnogram: empty stage sequence");
    }
    const std::size_t n = stages.size();
    const double total_hours = static_cast<double>(n) * 30.0 / 3600.0;
    const auto x_at = [&](double hours) { return kLeft + hours / total_hours * kPlotW; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1072\" height=\"288\" "
           "viewBox=\"0 0 1072 288\">\n";
    svg += "<g font-family=\"sans-serif\" font-size=\"12\" fill=\"#333\">\n";

    for (int row = 0; row < kNumStages; ++row) {
        const double y = row_y(row);
        svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(y) + "\" x2=\"" +
               num(kLeft + kPlotW) + "\" y2=\"" + num(y) +
               "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
    }
    for (int row = 0; row < kNumStages; ++row) {
        svg += "<text x=\"" + num(kLeft - 10.0) + "\" y=\"" + num(row_y(row) + 4.0) +
               "\" text-anchor=\"end\">" + kRowLabel[row] + "</text>\n";
    }

    const double axis_y = kTop + kPlotH;
    for (int h = 0; h <= static_cast<int>(std::floor(total_hours + 1e-9)); ++h) {
        const double x = x_at(static_cast<double>(h));
        svg += "<line x1=\"" + num(x) + "\" y1=\"" + num(axis_y) + "\" x2=\"" + num(x) +
               "\" y2=\"" + num(axis_y + 6.0) + "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
        svg += "<text x=\"" + num(x) + "\" y=\"" + num(axis_y + 20.0) +
               "\" text-anchor=\"middle\">" + std::to_string(h) + "h</text>\n";
    }

    std::string points;
    const double epoch_hours = 30.0 / 3600.0;
    points += num(x_at(0.0)) + "," + num(row_y(kStageRow[static_cast<int>(stages[0])]));
    for (std::size_t i = 0; i < n; ++i) {
        const double y = row_y(kStageRow[static_cast<int>(stages[i])]);
        points += " " + num(x_at(static_cast<double>(i + 1) * epoch_hours)) + "," + num(y);
        if (i + 1 < n && stages[i + 1] != stages[i]) {
            const double ny = row_y(kStageRow[static_cast<int>(stages[i + 1])]);
            points += " " + num(x_at(static_cast<double>(i + 1) * epoch_hours)) + "," +
                      num(ny);
        }
    }
    svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" +
           points + "\"/>\n";
    svg += "</g>\n</svg>\n";
    return svg;
}

}  // namespace sleepscore
