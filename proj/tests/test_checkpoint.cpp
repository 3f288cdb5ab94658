#include <doctest.h>

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "sleepscore/checkpoint.hpp"
#include "support/synthetic.hpp"

using namespace sleepscore;

namespace {

ModelConfig tiny_config() {
    ModelConfig c = make_config(16);
    c.lstm_hidden = 8;
    c.shortcut_width = 16;
    c.dropout_p = 0.0;
    return c;
}

CheckpointMeta meta() {
    CheckpointMeta m;
    m.phase = "finetune";
    m.seed = 99;
    m.pass = 7;
    m.step = 123;
    m.train_subjects = {"s0", "s1"};
    return m;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/sleepscore_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("encode and decode preserve every field") {
    Rng rng(120);
    SleepStageNet model = build(tiny_config(), rng);
    const Checkpoint cp = snapshot(model, meta());

    const Checkpoint back = decode_checkpoint(encode_checkpoint(cp));
    CHECK(back.config.fs == 16);
    CHECK(back.config.lstm_hidden == 8);
    CHECK(back.config.small.conv1_width == cp.config.small.conv1_width);
    CHECK(back.config.dropout_p == cp.config.dropout_p);
    CHECK(back.meta.phase == "finetune");
    CHECK(back.meta.seed == 99);
    CHECK(back.meta.pass == 7);
    CHECK(back.meta.step == 123);
    CHECK(back.meta.train_subjects == std::vector<std::string>{"s0", "s1"});
    REQUIRE(back.arrays.size() == cp.arrays.size());
    for (std::size_t i = 0; i < cp.arrays.size(); ++i) {
        CHECK(back.arrays[i].name == cp.arrays[i].name);
        CHECK(back.arrays[i].shape == cp.arrays[i].shape);
        CHECK(back.arrays[i].values == cp.arrays[i].values);
    }
}

TEST_CASE("a restored model predicts bit-identically") {
    Rng rng(121);
    SleepStageNet model = build(tiny_config(), rng);
    Rng srng(122);
    const auto subject = synthetic::make_subject("s0", 16, 11, srng);

    Rng p1(123);
    const auto before = predict(model, subject, p1);

    TempFile file("roundtrip.ckpt");
    save_checkpoint(file.path, snapshot(model, meta()));
    SleepStageNet loaded = restore(load_checkpoint(file.path));

    Rng p2(123);
    const auto after = predict(loaded, subject, p2);
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i].stage == before[i].stage);
        CHECK(after[i].probs == before[i].probs);
    }
}

TEST_CASE("version and magic mismatches are rejected") {
    Rng rng(124);
    SleepStageNet model = build(tiny_config(), rng);
    auto bytes = encode_checkpoint(snapshot(model, meta()));

    auto wrong_version = bytes;
    wrong_version[8] = 9;
    CHECK_THROWS_WITH_AS(decode_checkpoint(wrong_version), doctest::Contains("version 9"),
                         std::runtime_error);

    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_checkpoint(wrong_magic), doctest::Contains("magic"),
                         std::runtime_error);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_WITH_AS(decode_checkpoint(truncated), doctest::Contains("truncated"),
                         std::runtime_error);

    auto padded = bytes;
    padded.push_back(0);
    CHECK_THROWS_WITH_AS(decode_checkpoint(padded), doctest::Contains("trailing"),
                         std::runtime_error);

    CHECK_THROWS_WITH_AS(load_checkpoint("/tmp/definitely_missing.ckpt"),
                         doctest::Contains("cannot open"), std::runtime_error);
}

TEST_CASE("restore demands a complete and exact parameter set") {
    Rng rng(125);
    SleepStageNet model = build(tiny_config(), rng);
    const Checkpoint full = snapshot(model, meta());

    Checkpoint missing = full;
    missing.arrays.erase(missing.arrays.begin());
    CHECK_THROWS_WITH_AS(restore(missing), doctest::Contains("missing"),
                         std::invalid_argument);

    Checkpoint doubled = full;
    doubled.arrays.push_back(doubled.arrays.front());
    CHECK_THROWS_WITH_AS(restore(doubled), doctest::Contains("twice"),
                         std::invalid_argument);

    Checkpoint misshapen = full;
    misshapen.arrays[0].shape.back() += 1;
    misshapen.arrays[0].values.resize(
        misshapen.arrays[0].values.size() +
        static_cast<std::size_t>(misshapen.arrays[0].shape[0]));
    CHECK_THROWS_WITH_AS(restore(misshapen), doctest::Contains("shape"),
                         std::invalid_argument);

    Checkpoint alien = full;
    alien.arrays.push_back(NamedShapedArray{"nobody.weights", {2}, {1.0, 2.0}});
    CHECK_THROWS_WITH_AS(restore(alien), doctest::Contains("do not belong"),
                         std::invalid_argument);

    // a branch-only checkpoint cannot restore a full model
    Checkpoint cnn = cnn_snapshot(model, meta());
    CHECK(cnn.arrays.size() < full.arrays.size());
    CHECK_THROWS_AS(restore(cnn), std::invalid_argument);
}

TEST_CASE("a branch checkpoint feeds fine-tuning through flat_arrays") {
    Rng rng(126);
    SleepStageNet a = build(tiny_config(), rng);
    SleepStageNet b = build(tiny_config(), rng);

    const Checkpoint cnn = cnn_snapshot(a, meta());
    replace_cnns(b, flat_arrays(cnn));

    Rng drng(127);
    const Tensor x = Tensor::uniform({2, 480, 1}, -1.0, 1.0, drng);
    Rng unused(0);
    const Tensor fa = featurize(a, x, Mode::Eval, unused);
    const Tensor fb = featurize(b, x, Mode::Eval, unused);
    for (std::size_t i = 0; i < fa.values().size(); ++i) {
        CHECK(fa.values()[i] == fb.values()[i]);
    }
}

TEST_SUITE_END();
