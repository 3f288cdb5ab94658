#pragma once

// Hypnogram rendering: a one-character-per-epoch text strip and an SVG step
// plot with the conventional clinical stage ordering (W at the top, N3 at the
// bottom) over a time axis in hours.

#include <string>
#include <vector>

#include "sleepscore/dataset.hpp"

namespace sleepscore {

/// One character per epoch: W, 1, 2, 3, R.
std::string hypnogram_text(const std::vector<Stage>& stages);

/// Inverse of hypnogram_text; unknown characters throw.
std::vector<Stage> parse_hypnogram_text(const std::string& text);

/// Deterministic SVG step plot. Stage axis ordered W, REM, N1, N2, N3 from
/// top to bottom; x axis labeled in hours (one epoch = 30 s).
std::string hypnogram_svg(const std::vector<Stage>& stages);

}  // namespace sleepscore
