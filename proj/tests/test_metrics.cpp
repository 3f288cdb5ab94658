#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sleepscore/metrics.hpp"
#include "sleepscore/rng.hpp"

using namespace sleepscore;

namespace {

ConfusionMatrix from_rows(const std::int64_t (&rows)[5][5]) {
    ConfusionMatrix cm;
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 5; ++c) {
            cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = rows[r][c];
        }
    }
    return cm;
}

// 31-fold pooled test matrix, 58600 epochs.
const std::int64_t kPooled31[5][5] = {{5433, 572, 107, 13, 102},
                                      {452, 2802, 827, 4, 639},
                                      {185, 906, 26786, 1158, 499},
                                      {18, 4, 1552, 6077, 0},
                                      {132, 356, 533, 1, 9442}};

// 20-fold pooled test matrix, 41950 epochs.
const std::int64_t kPooled20[5][5] = {{6614, 745, 181, 81, 306},
                                      {295, 1406, 631, 30, 442},
                                      {391, 618, 14542, 1473, 775},
                                      {29, 9, 291, 5370, 4},
                                      {360, 457, 419, 7, 6474}};

// 31-fold pooled matrix from the CNN-only ablation.
const std::int64_t kPooledCnnOnly[5][5] = {{5215, 709, 94, 19, 190},
                                           {468, 2582, 747, 11, 916},
                                           {241, 1846, 24140, 2435, 872},
                                           {19, 3, 472, 7156, 1},
                                           {227, 1181, 383, 5, 8668}};

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("confusion accumulates pairs and rejects mismatched lengths") {
    const std::vector<Stage> truth = {Stage::Wake, Stage::N2, Stage::N2, Stage::Rem};
    const std::vector<Stage> pred = {Stage::Wake, Stage::N2, Stage::N3, Stage::Rem};
    const ConfusionMatrix cm = confusion(truth, pred);
    CHECK(cm.total() == 4);
    CHECK(cm.counts[2][2] == 1);
    CHECK(cm.counts[2][3] == 1);
    CHECK(cm.row_total(2) == 2);
    CHECK(cm.col_total(4) == 1);
    CHECK_THROWS_AS(confusion(truth, {Stage::Wake}), std::invalid_argument);
}

TEST_CASE("perfect agreement scores 1.0 everywhere") {
    ConfusionMatrix cm;
    for (int c = 0; c < kNumStages; ++c) {
        cm.counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)] = 10 + c;
    }
    const MetricsReport r = score(cm);
    CHECK(r.accuracy == 1.0);
    CHECK(r.macro_f1 == 1.0);
    CHECK(r.kappa_defined);
    CHECK(r.kappa == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& s : r.per_class) {
        CHECK(s.f1 == 1.0);
        CHECK(!s.degenerate);
    }
}

TEST_CASE("uniform matrix scores chance accuracy") {
    ConfusionMatrix cm;
    for (auto& row : cm.counts) {
        row.fill(1);
    }
    CHECK(accuracy(cm) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("empty matrix is rejected") {
    ConfusionMatrix cm;
    CHECK_THROWS_WITH_AS(accuracy(cm), doctest::Contains("empty"), std::invalid_argument);
    CHECK_THROWS_AS(score(cm), std::invalid_argument);
}

TEST_CASE("pooled 31-fold matrix reproduces the archived report") {
    const MetricsReport r = score(from_rows(kPooled31));
    CHECK(r.matrix.total() == 58600);
    CHECK(r.accuracy == doctest::Approx(0.86245734).epsilon(1e-8));
    CHECK(r.macro_f1 == doctest::Approx(0.81655430).epsilon(1e-8));
    CHECK(r.kappa == doctest::Approx(0.796921).epsilon(1e-6));

    const double expected[5][3] = {{87.3473, 87.2491, 87.2981},
                                   {60.3879, 59.3141, 59.8462},
                                   {89.8708, 90.6955, 90.2813},
                                   {83.7860, 79.4275, 81.5486},
                                   {88.3917, 90.2332, 89.3029}};
    for (int c = 0; c < kNumStages; ++c) {
        const auto& s = r.per_class[static_cast<std::size_t>(c)];
        CHECK(100.0 * s.precision == doctest::Approx(expected[c][0]).epsilon(1e-6));
        CHECK(100.0 * s.recall == doctest::Approx(expected[c][1]).epsilon(1e-6));
        CHECK(100.0 * s.f1 == doctest::Approx(expected[c][2]).epsilon(1e-6));
        CHECK(!s.degenerate);
    }
}

TEST_CASE("pooled 20-fold matrix reproduces the archived report") {
    const MetricsReport r = score(from_rows(kPooled20));
    CHECK(r.matrix.total() == 41950);
    CHECK(r.accuracy == doctest::Approx(0.82016687).epsilon(1e-8));
    CHECK(r.macro_f1 == doctest::Approx(0.76868693).epsilon(1e-8));
    CHECK(r.kappa == doctest::Approx(0.757012).epsilon(1e-6));
    const double f1s[5] = {84.7080, 46.5640, 85.8873, 84.8073, 82.3769};
    for (int c = 0; c < kNumStages; ++c) {
        CHECK(100.0 * r.per_class[static_cast<std::size_t>(c)].f1 ==
              doctest::Approx(f1s[c]).epsilon(1e-6));
    }
}

TEST_CASE("CNN-only ablation matrix reproduces the archived report") {
    const MetricsReport r = score(from_rows(kPooledCnnOnly));
    CHECK(r.accuracy == doctest::Approx(0.81503413).epsilon(1e-8));
    CHECK(r.kappa == doctest::Approx(0.737272).epsilon(1e-6));
    CHECK(100.0 * r.per_class[1].f1 == doctest::Approx(46.7542).epsilon(1e-6));
}

TEST_CASE("macro-F1 lies between the extreme per-class scores") {
    Rng rng(50);
    for (int trial = 0; trial < 50; ++trial) {
        ConfusionMatrix cm;
        for (auto& row : cm.counts) {
            for (auto& v : row) {
                v = static_cast<std::int64_t>(rng.uniform_int(40));
            }
        }
        if (cm.total() == 0) {
            continue;
        }
        const MetricsReport r = score(cm);
        double lo = 1.0, hi = 0.0;
        for (const auto& s : r.per_class) {
            lo = std::min(lo, s.f1);
            hi = std::max(hi, s.f1);
        }
        CHECK(r.macro_f1 >= lo - 1e-12);
        CHECK(r.macro_f1 <= hi + 1e-12);
        if (r.kappa_defined) {
            CHECK(r.kappa <= r.accuracy + 1e-12);
        }
        const MetricsReport again = score(cm);
        CHECK(again.accuracy == r.accuracy);
        CHECK(again.macro_f1 == r.macro_f1);
        CHECK(again.kappa == r.kappa);
    }
}

TEST_CASE("independent margins give zero kappa") {
    const std::int64_t row_m[5] = {1, 2, 3, 4, 5};
    const std::int64_t col_m[5] = {2, 3, 4, 5, 6};
    ConfusionMatrix cm;
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 5; ++c) {
            cm.counts[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                row_m[r] * col_m[c];
        }
    }
    const MetricsReport rep = score(cm);
    CHECK(rep.kappa_defined);
    CHECK(std::abs(rep.kappa) < 1e-12);
}

TEST_CASE("absent classes are flagged degenerate, not NaN") {
    ConfusionMatrix cm;
    cm.counts[0][0] = 5;
    cm.counts[2][2] = 3;
    cm.counts[2][0] = 1;
    const MetricsReport r = score(cm);
    CHECK(r.per_class[1].degenerate);
    CHECK(r.per_class[1].f1 == 0.0);
    CHECK(r.per_class[1].precision == 0.0);
    CHECK(r.per_class[1].recall == 0.0);
    CHECK(!r.per_class[0].degenerate);
    CHECK(std::isfinite(r.macro_f1));
    CHECK(r.macro_f1 == doctest::Approx((10.0 / 11.0 + 6.0 / 7.0) / 5.0).epsilon(1e-12));
}

TEST_CASE("constant labels on both sides leave kappa undefined") {
    ConfusionMatrix cm;
    cm.counts[2][2] = 50;
    const MetricsReport r = score(cm);
    CHECK(!r.kappa_defined);
    CHECK(r.accuracy == 1.0);
}

TEST_CASE("hand-computed small matrix") {
    ConfusionMatrix cm;
    cm.counts[0][0] = 3;
    cm.counts[0][1] = 1;
    cm.counts[1][1] = 2;
    const MetricsReport r = score(cm);
    CHECK(r.accuracy == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK(r.per_class[0].precision == 1.0);
    CHECK(r.per_class[0].recall == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(r.per_class[1].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.per_class[1].recall == 1.0);
    CHECK(r.kappa == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("renderers are deterministic and carry the headline numbers") {
    const MetricsReport r = score(from_rows(kPooled31));
    const std::string table = render_report(r);
    CHECK(table == render_report(r));
    CHECK(table.find("26786") != std::string::npos);
    CHECK(table.find("accuracy 86.25%") != std::string::npos);
    CHECK(table.find("macro-F1 81.66%") != std::string::npos);
    CHECK(table.find("kappa 0.7969") != std::string::npos);

    const std::string csv = render_confusion_csv(r.matrix);
    CHECK(csv.find(",W,N1,N2,N3,REM\n") == 0);
    CHECK(csv.find("N2,185,906,26786,1158,499\n") != std::string::npos);

    ConfusionMatrix lonely;
    lonely.counts[3][3] = 7;
    const std::string undef = render_report(score(lonely));
    CHECK(undef.find("kappa undefined") != std::string::npos);
    CHECK(undef.find("*") != std::string::npos);
}

TEST_SUITE_END();
