#include <doctest.h>

#include <stdexcept>
#include <string>
#include <vector>

#include "sleepscore/hypnogram.hpp"

using namespace sleepscore;

TEST_SUITE_BEGIN("hypnogram");

TEST_CASE("text strips map one character per epoch and round-trip") {
    const std::vector<Stage> stages{Stage::Wake, Stage::N1, Stage::N2, Stage::N3,
                                    Stage::Rem,  Stage::Rem, Stage::Wake};
    const std::string text = hypnogram_text(stages);
    CHECK(text == "W123RRW");
    CHECK(text.size() == stages.size());
    CHECK(parse_hypnogram_text(text) == stages);

    CHECK(hypnogram_text({}).empty());
    CHECK_THROWS_WITH_AS(parse_hypnogram_text("W1?2"),
                         doctest::Contains("'?' at position 2"), std::invalid_argument);
}

TEST_CASE("svg rendering is deterministic byte for byte") {
    std::vector<Stage> stages;
    for (int i = 0; i < 40; ++i) {
        stages.push_back(static_cast<Stage>(i % 5));
    }
    const std::string a = hypnogram_svg(stages);
    const std::string b = hypnogram_svg(stages);
    CHECK(a == b);
    CHECK(a.find("<svg") == 0);
    CHECK(a.find("</svg>") != std::string::npos);

    CHECK_THROWS_WITH_AS(hypnogram_svg({}), doctest::Contains("empty"),
                         std::invalid_argument);
}

TEST_CASE("a two-hour wake recording renders as a flat top line") {
    const std::vector<Stage> stages(240, Stage::Wake);  // 240 epochs = 2 h
    const std::string svg = hypnogram_svg(stages);

    // flat: the polyline holds exactly one distinct y, the top row
    const auto start = svg.find("points=\"");
    REQUIRE(start != std::string::npos);
    const auto end = svg.find('"', start + 8);
    const std::string points = svg.substr(start + 8, end - start - 8);
    std::size_t pos = 0;
    std::vector<std::string> ys;
    while (pos < points.size()) {
        const auto comma = points.find(',', pos);
        auto space = points.find(' ', comma);
        if (space == std::string::npos) {
            space = points.size();
        }
        ys.push_back(points.substr(comma + 1, space - comma - 1));
        pos = space + 1;
    }
    REQUIRE(!ys.empty());
    for (const auto& y : ys) {
        CHECK(y == ys.front());
    }

    // axis spans exactly two hours
    CHECK(svg.find(">0h</text>") != std::string::npos);
    CHECK(svg.find(">2h</text>") != std::string::npos);
    CHECK(svg.find(">3h</text>") == std::string::npos);

    // stage axis ordered W, REM, N1, N2, N3 top to bottom
    const auto w = svg.find(">W</text>");
    const auto rem = svg.find(">REM</text>");
    const auto n1 = svg.find(">N1</text>");
    const auto n2 = svg.find(">N2</text>");
    const auto n3 = svg.find(">N3</text>");
    REQUIRE(w != std::string::npos);
    REQUIRE(rem != std::string::npos);
    CHECK(w < rem);
    CHECK(rem < n1);
    CHECK(n1 < n2);
    CHECK(n2 < n3);
}

TEST_CASE("stage transitions produce vertical connectors") {
    const std::vector<Stage> stages{Stage::Wake, Stage::Wake, Stage::N2};
    const std::string svg = hypnogram_svg(stages);
    const auto start = svg.find("points=\"");
    const auto end = svg.find('"', start + 8);
    const std::string points = svg.substr(start + 8, end - start - 8);
    // W segment (2 points) + start anchor + connector + N2 segment end: 5 pairs
    std::size_t pairs = 1;
    for (const char c : points) {
        pairs += c == ' ' ? 1 : 0;
    }
    CHECK(pairs == 5);
}

TEST_SUITE_END();
