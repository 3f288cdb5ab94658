#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sleepscore/dataset.hpp"

using namespace sleepscore;

namespace {

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

SubjectRecording labeled_subject(const std::string& id, const std::vector<Stage>& labels) {
    SubjectRecording s;
    s.subject_id = id;
    s.fs = 1;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        EpochRecord e;
        e.epoch_index = static_cast<std::int64_t>(i);
        e.label = labels[i];
        e.samples.assign(30, static_cast<double>(i));
        s.epochs.push_back(std::move(e));
    }
    return s;
}

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("stage names round-trip") {
    const std::array<std::string, 5> names = {"W", "N1", "N2", "N3", "REM"};
    for (int i = 0; i < kNumStages; ++i) {
        const auto s = static_cast<Stage>(i);
        CHECK(stage_name(s) == names[static_cast<std::size_t>(i)]);
        CHECK(stage_from_name(names[static_cast<std::size_t>(i)]) == s);
    }
    CHECK_THROWS_WITH_AS(stage_from_name("N4"), doctest::Contains("N4"),
                         std::invalid_argument);
}

TEST_CASE("label harmonization merges the deep stages and drops the unusable") {
    CHECK(map_label("Sleep stage W", ScoringStandard::Rk) == Stage::Wake);
    CHECK(map_label("Sleep stage R", ScoringStandard::Rk) == Stage::Rem);
    CHECK(map_label("Sleep stage 1", ScoringStandard::Rk) == Stage::N1);
    CHECK(map_label("Sleep stage 2", ScoringStandard::Rk) == Stage::N2);
    CHECK(map_label("Sleep stage 3", ScoringStandard::Rk) == Stage::N3);
    CHECK(map_label("Sleep stage 4", ScoringStandard::Rk) == Stage::N3);
    CHECK(map_label("W", ScoringStandard::Aasm) == Stage::Wake);
    CHECK(map_label("Sleep stage N1", ScoringStandard::Aasm) == Stage::N1);
    CHECK(map_label("Sleep stage N2", ScoringStandard::Aasm) == Stage::N2);
    CHECK(map_label("Sleep stage N3", ScoringStandard::Aasm) == Stage::N3);
    CHECK(map_label("REM", ScoringStandard::Aasm) == Stage::Rem);

    CHECK(!map_label("Movement time", ScoringStandard::Rk).has_value());
    CHECK(!map_label("Sleep stage ?", ScoringStandard::Rk).has_value());
    CHECK(!map_label("MOVEMENT", ScoringStandard::Aasm).has_value());
    CHECK(!map_label("UNKNOWN", ScoringStandard::Aasm).has_value());
    CHECK(!map_label("?", ScoringStandard::Rk).has_value());

    CHECK_THROWS_WITH_AS(map_label("Sleep stage 4", ScoringStandard::Aasm),
                         doctest::Contains("Sleep stage 4"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(map_label("deep sleep", ScoringStandard::Rk),
                         doctest::Contains("deep sleep"), std::invalid_argument);
}

TEST_CASE("epoch extraction cuts aligned 30-s slices") {
    const std::int64_t fs = 2;
    std::vector<double> signal(180);
    std::iota(signal.begin(), signal.end(), 0.0);
    const std::vector<Annotation> anns = {
        {60.0, 30.0, "Sleep stage 1"},
        {0.0, 60.0, "Sleep stage W"},
        {90.0, 30.0, "Movement time"},
    };
    const auto subject = extract_epochs(signal, fs, anns, "s1", ScoringStandard::Rk);
    CHECK(subject.subject_id == "s1");
    CHECK(subject.fs == fs);
    REQUIRE(subject.epochs.size() == 3);
    CHECK(subject.epochs[0].epoch_index == 0);
    CHECK(subject.epochs[0].label == Stage::Wake);
    CHECK(subject.epochs[1].epoch_index == 1);
    CHECK(subject.epochs[2].epoch_index == 2);
    CHECK(subject.epochs[2].label == Stage::N1);
    CHECK(subject.epochs[1].samples.front() == 60.0);
    CHECK(subject.epochs[1].samples.back() == 119.0);
    CHECK(subject.epochs[2].samples.front() == 120.0);
}

TEST_CASE("excluded spans may overhang the signal, scored spans may not") {
    std::vector<double> signal(60, 0.0);
    const std::vector<Annotation> ok = {
        {0.0, 30.0, "Sleep stage 2"},
        {30.0, 600.0, "Sleep stage ?"},
    };
    CHECK(extract_epochs(signal, 2, ok, "s", ScoringStandard::Rk).epochs.size() == 1);

    const std::vector<Annotation> overhang = {{30.0, 60.0, "Sleep stage 2"}};
    CHECK_THROWS_WITH_AS(extract_epochs(signal, 2, overhang, "s", ScoringStandard::Rk),
                         doctest::Contains("epoch 1"), std::invalid_argument);

    const std::vector<Annotation> misaligned = {{15.0, 30.0, "Sleep stage 2"}};
    CHECK_THROWS_WITH_AS(extract_epochs(signal, 2, misaligned, "s", ScoringStandard::Rk),
                         doctest::Contains("30-s aligned"), std::invalid_argument);

    const std::vector<Annotation> short_span = {{0.0, 10.0, "Sleep stage 2"}};
    CHECK_THROWS_AS(extract_epochs(signal, 2, short_span, "s", ScoringStandard::Rk),
                    std::invalid_argument);
}

TEST_CASE("wake trimming keeps at most 60 epochs on either flank") {
    std::vector<Stage> labels(100, Stage::Wake);
    labels.insert(labels.end(), 5, Stage::N2);
    labels.insert(labels.end(), 30, Stage::Wake);
    const auto trimmed = trim_wake(labeled_subject("s", labels));
    REQUIRE(trimmed.epochs.size() == 95);
    CHECK(trimmed.epochs.front().epoch_index == 40);
    CHECK(trimmed.epochs.back().epoch_index == 134);
    CHECK(trimmed.epochs[60].label == Stage::N2);
    CHECK(trimmed.epochs[60].samples.front() == 100.0);

    std::vector<Stage> interior(40, Stage::Wake);
    interior[3] = Stage::Rem;
    interior[30] = Stage::N1;
    const auto kept = trim_wake(labeled_subject("s", interior));
    CHECK(kept.epochs.size() == 40);

    CHECK_THROWS_WITH_AS(trim_wake(labeled_subject("only-wake", {Stage::Wake, Stage::Wake})),
                         doctest::Contains("only-wake"), std::runtime_error);
}

TEST_CASE("oversampling balances every stage to the majority count") {
    const std::vector<Stage> labels = {Stage::Wake, Stage::Wake, Stage::N1,  Stage::N2,
                                       Stage::N2,   Stage::N2,   Stage::N3, Stage::Rem};
    Rng rng(40);
    const auto idx = oversample_indices(labels, rng);
    CHECK(idx.size() == 15);
    std::array<int, kNumStages> counts{};
    std::vector<int> seen(labels.size(), 0);
    for (const auto i : idx) {
        counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]++;
        seen[static_cast<std::size_t>(i)]++;
    }
    for (const int c : counts) {
        CHECK(c == 3);
    }
    for (const int s : seen) {
        CHECK(s >= 1);
    }
    CHECK(seen[2] == 3);

    Rng again(40);
    CHECK(oversample_indices(labels, again) == idx);
}

TEST_CASE("oversampling a balanced set is a grouped identity") {
    const std::vector<Stage> labels = {Stage::Rem, Stage::N3, Stage::N2, Stage::N1,
                                       Stage::Wake};
    Rng rng(41);
    auto idx = oversample_indices(labels, rng);
    std::sort(idx.begin(), idx.end());
    CHECK(idx == std::vector<std::int64_t>{0, 1, 2, 3, 4});

    const std::vector<Stage> missing = {Stage::Wake, Stage::N1, Stage::N2, Stage::N3};
    CHECK_THROWS_WITH_AS(oversample_indices(missing, rng), doctest::Contains("REM"),
                         std::invalid_argument);
}

TEST_CASE("sequence arrangement walks ten even lanes in parallel") {
    const auto steps = arrange_sequences(1000, 10, 25);
    REQUIRE(steps.size() == 4);
    for (const auto& step : steps) {
        CHECK(step.lane_ids.size() == 10);
        CHECK(step.step_len == 25);
        CHECK(step.epoch_indices.size() == 250);
    }
    CHECK(steps[0].epoch_indices[0] == 0);
    CHECK(steps[0].epoch_indices[25] == 100);
    CHECK(steps[1].epoch_indices[0] == 25);
}

TEST_CASE("the last lane absorbs the remainder and finishes alone") {
    const auto steps = arrange_sequences(1003, 10, 25);
    REQUIRE(steps.size() == 5);
    CHECK(steps[4].lane_ids == std::vector<std::int64_t>{9});
    CHECK(steps[4].step_len == 3);
    CHECK(steps[4].epoch_indices == std::vector<std::int64_t>{1000, 1001, 1002});
}

TEST_CASE("every epoch appears once, contiguously per lane") {
    for (const auto& [n, lanes, seq] :
         std::vector<std::tuple<std::int64_t, std::int64_t, std::int64_t>>{
             {7, 3, 2}, {1003, 10, 25}, {42, 5, 4}, {5, 5, 25}}) {
        const auto steps = arrange_sequences(n, lanes, seq);
        std::vector<std::vector<std::int64_t>> per_lane(static_cast<std::size_t>(lanes));
        std::int64_t total = 0;
        for (const auto& step : steps) {
            CHECK(step.step_len >= 1);
            CHECK(step.step_len <= seq);
            CHECK(std::is_sorted(step.lane_ids.begin(), step.lane_ids.end()));
            REQUIRE(step.epoch_indices.size() ==
                    step.lane_ids.size() * static_cast<std::size_t>(step.step_len));
            for (std::size_t l = 0; l < step.lane_ids.size(); ++l) {
                for (std::int64_t t = 0; t < step.step_len; ++t) {
                    per_lane[static_cast<std::size_t>(step.lane_ids[l])].push_back(
                        step.epoch_indices[l * static_cast<std::size_t>(step.step_len) +
                                           static_cast<std::size_t>(t)]);
                }
            }
            total += static_cast<std::int64_t>(step.epoch_indices.size());
        }
        CHECK(total == n);
        std::int64_t expect = 0;
        for (const auto& lane : per_lane) {
            for (const auto i : lane) {
                CHECK(i == expect++);
            }
        }
        CHECK(expect == n);
    }
    CHECK_THROWS_AS(arrange_sequences(3, 4, 25), std::invalid_argument);
    CHECK_THROWS_AS(arrange_sequences(10, 0, 25), std::invalid_argument);
}

TEST_CASE("subject folds are contiguous, disjoint and exhaustive") {
    const auto f20 = split_folds(20, 20);
    REQUIRE(f20.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(f20[i] == std::vector<std::int64_t>{static_cast<std::int64_t>(i)});
    }

    const auto f31 = split_folds(62, 31);
    REQUIRE(f31.size() == 31);
    for (const auto& fold : f31) {
        CHECK(fold.size() == 2);
    }

    const auto f3 = split_folds(5, 3);
    CHECK(f3[0].size() == 2);
    CHECK(f3[1].size() == 2);
    CHECK(f3[2].size() == 1);
    std::vector<std::int64_t> all;
    for (const auto& fold : f3) {
        all.insert(all.end(), fold.begin(), fold.end());
    }
    CHECK(all == std::vector<std::int64_t>{0, 1, 2, 3, 4});

    CHECK_THROWS_AS(split_folds(5, 6), std::invalid_argument);
    CHECK_THROWS_AS(split_folds(5, 0), std::invalid_argument);
}

TEST_CASE("epoch cache round-trips bit-exactly") {
    const std::string path = "cache_tmp.bin";
    std::vector<SubjectRecording> subjects;
    Rng rng(42);
    for (const char* id : {"a", "b"}) {
        SubjectRecording s;
        s.subject_id = id;
        s.fs = 4;
        for (int e = 0; e < 3; ++e) {
            EpochRecord rec;
            rec.epoch_index = e + 7;
            rec.label = static_cast<Stage>(e);
            for (int k = 0; k < 120; ++k) {
                rec.samples.push_back(rng.uniform(-100.0, 100.0));
            }
            s.epochs.push_back(std::move(rec));
        }
        subjects.push_back(std::move(s));
    }
    write_epoch_cache(path, subjects, 4);
    std::int64_t fs = 0;
    const auto back = read_epoch_cache(path, &fs);
    CHECK(fs == 4);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].subject_id == subjects[i].subject_id);
        REQUIRE(back[i].epochs.size() == 3);
        for (std::size_t e = 0; e < 3; ++e) {
            CHECK(back[i].epochs[e].epoch_index == subjects[i].epochs[e].epoch_index);
            CHECK(back[i].epochs[e].label == subjects[i].epochs[e].label);
            CHECK(back[i].epochs[e].samples == subjects[i].epochs[e].samples);
        }
    }

    auto bytes = slurp(path);
    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    spit(path, wrong_magic);
    CHECK_THROWS_WITH_AS(read_epoch_cache(path, nullptr), doctest::Contains("magic"),
                         std::runtime_error);

    auto wrong_version = bytes;
    wrong_version[8] = 9;
    spit(path, wrong_version);
    CHECK_THROWS_WITH_AS(read_epoch_cache(path, nullptr), doctest::Contains("version 9"),
                         std::runtime_error);

    auto trailing = bytes;
    trailing.push_back(0);
    spit(path, trailing);
    CHECK_THROWS_WITH_AS(read_epoch_cache(path, nullptr), doctest::Contains("trailing"),
                         std::runtime_error);
    std::remove(path.c_str());

    subjects[1].fs = 8;
    CHECK_THROWS_WITH_AS(write_epoch_cache(path, subjects, 4), doctest::Contains("8"),
                         std::invalid_argument);
}

TEST_CASE("sidecar hypnograms ignore comments and validate lines") {
    const std::string text =
        "# scored by tech 4\r\n"
        "0,Sleep stage W\n"
        "\n"
        "1,Sleep stage 2\r\n"
        "2,Movement time\n";
    const auto rows = parse_sidecar_hypnogram(text);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == std::pair<std::int64_t, std::string>{0, "Sleep stage W"});
    CHECK(rows[1] == std::pair<std::int64_t, std::string>{1, "Sleep stage 2"});
    CHECK(rows[2].second == "Movement time");

    CHECK_THROWS_WITH_AS(parse_sidecar_hypnogram("0,W\nbogus\n"),
                         doctest::Contains("line 2"), std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_sidecar_hypnogram("x,W\n"), doctest::Contains("line 1"),
                         std::runtime_error);
}

TEST_CASE("channel selection calibrates and subtracts montage references") {
    EdfFile f;
    f.header.n_records = 1;
    f.header.record_duration_s = 1.0;
    EdfSignalHeader a;
    a.label = "F4";
    a.physical_min = -100.0;
    a.physical_max = 100.0;
    a.digital_min = -1000;
    a.digital_max = 1000;
    a.samples_per_record = 4;
    EdfSignalHeader b = a;
    b.label = "EOG Left";
    f.header.signals = {a, b};
    f.samples = {{0, 1000, -1000, 500}, {0, 500, 500, 500}};

    const auto raw = select_channel(f, "F4");
    CHECK(raw[0] == doctest::Approx(0.0));
    CHECK(raw[1] == doctest::Approx(100.0));
    CHECK(raw[2] == doctest::Approx(-100.0));

    const auto montage = select_channel(f, "F4:EOG Left");
    CHECK(montage[0] == doctest::Approx(0.0));
    CHECK(montage[1] == doctest::Approx(50.0));
    CHECK(montage[2] == doctest::Approx(-150.0));
    CHECK(montage[3] == doctest::Approx(0.0));

    CHECK_THROWS_WITH_AS(select_channel(f, "C3"), doctest::Contains("'F4', 'EOG Left'"),
                         std::invalid_argument);

    f.samples[1].pop_back();
    f.header.signals[1].samples_per_record = 3;
    CHECK_THROWS_WITH_AS(select_channel(f, "F4:EOG Left"), doctest::Contains("montage"),
                         std::invalid_argument);
}

TEST_CASE("sampling rates derive from samples per record") {
    EdfFile f;
    f.header.record_duration_s = 30.0;
    EdfSignalHeader s;
    s.label = "EEG";
    s.samples_per_record = 3000;
    f.header.signals = {s};
    CHECK(signal_fs(f, 0) == 100);

    f.header.signals[0].samples_per_record = 70;
    CHECK_THROWS_WITH_AS(signal_fs(f, 0), doctest::Contains("non-integral"),
                         std::invalid_argument);
    CHECK_THROWS_AS(signal_fs(f, 3), std::invalid_argument);
    f.header.record_duration_s = 0.0;
    CHECK_THROWS_AS(signal_fs(f, 0), std::invalid_argument);
}

TEST_SUITE_END();
