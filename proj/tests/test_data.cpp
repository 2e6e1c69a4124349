#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "umc/data.hpp"

using namespace umc;

TEST_CASE("dataset generation is deterministic") {
    SyntheticSpec spec;
    spec.seed = 5;
    auto a = gen_dataset<float>(spec);
    auto b = gen_dataset<float>(spec);
    REQUIRE(a.und_train.size() == b.und_train.size());
    for (size_t i = 0; i < a.und_train.size(); ++i) {
        CHECK(a.und_train[i].tokens == b.und_train[i].tokens);
        CHECK(a.und_train[i].cls == b.und_train[i].cls);
    }
    for (size_t c = 0; c < a.patterns.size(); ++c)
        CHECK(a.patterns[c].data() == b.patterns[c].data());
}

TEST_CASE("degenerate specs are rejected") {
    SyntheticSpec spec;
    spec.n_classes = spec.vocab_size;  // classes collide with markers
    CHECK_THROWS_AS(gen_dataset<float>(spec), ConfigError);
    spec = SyntheticSpec{};
    spec.n_train = 1000;
    CHECK_THROWS_AS(gen_dataset<float>(spec), ConfigError);
}

TEST_CASE("single class: all generation targets identical") {
    SyntheticSpec spec;
    spec.n_classes = 1;
    spec.n_train = 8;
    spec.n_heldout = 4;
    auto ds = gen_dataset<float>(spec);
    for (const auto& s : ds.gen_train) CHECK(s.cls == 0);
    CHECK(ds.patterns.size() == 1);
}

TEST_CASE("the continuation rule is deterministic from the prefix") {
    SyntheticSpec spec;
    spec.seed = 11;
    auto ds = gen_dataset<float>(spec);
    // an oracle that enumerates the rule reaches accuracy 1.0 from position 1
    for (const auto& split : {ds.und_train, ds.und_heldout})
        for (const auto& s : split)
            for (int pos = 1; pos + 1 < spec.seq_len; ++pos) {
                // predictor: identify (class, offset) from tokens[0] and tokens[1]
                const int cls = s.tokens[0];
                int off = -1;
                for (int o = 0; o < spec.period; ++o)
                    if (ds.next_token_und(cls, o, 0) == s.tokens[1]) {
                        off = o;
                        break;
                    }
                REQUIRE(off >= 0);
                CHECK(s.tokens[static_cast<size_t>(pos + 1)] == ds.next_token_und(cls, off, pos));
            }
}

TEST_CASE("pattern classes are well separated") {
    SyntheticSpec spec;
    spec.seed = 3;
    auto ds = gen_dataset<float>(spec);
    for (size_t a = 0; a < ds.patterns.size(); ++a)
        for (size_t b = a + 1; b < ds.patterns.size(); ++b) {
            double d2 = 0.0;
            for (long i = 0; i < ds.patterns[a].numel(); ++i) {
                const double d = ds.patterns[a].at(i) - ds.patterns[b].at(i);
                d2 += d * d;
            }
            CHECK(d2 > 1.0);
        }
}

TEST_CASE("train and held-out splits are disjoint") {
    SyntheticSpec spec;
    spec.seed = 9;
    auto ds = gen_dataset<float>(spec);
    std::set<std::vector<int>> train_set;
    for (const auto& s : ds.und_train) train_set.insert(s.tokens);
    for (const auto& s : ds.und_heldout) CHECK(train_set.count(s.tokens) == 0);
}

TEST_CASE("calibration sampling") {
    SyntheticSpec spec;
    spec.seed = 1;
    auto ds = gen_dataset<float>(spec);

    auto full = make_calibration(ds, Task::Understanding, static_cast<int>(ds.und_train.size()), 0);
    CHECK(full.samples.size() == ds.und_train.size());
    std::set<std::vector<int>> seen;
    for (const auto& s : full.samples) CHECK(seen.insert(s.tokens).second);

    CHECK_THROWS_AS(make_calibration(ds, Task::Understanding, 10000, 0), InputError);

    auto a = make_calibration(ds, Task::Generation, 8, 1);
    auto b = make_calibration(ds, Task::Generation, 8, 2);
    CHECK(a.task == Task::Generation);
    CHECK(a.timestep_grid.size() == 8);
    CHECK(a.samples.size() == 8);
    // different seeds give (generically) different draws
    bool identical = true;
    for (size_t i = 0; i < a.samples.size(); ++i)
        identical = identical && a.samples[i].tokens == b.samples[i].tokens;
    CHECK(!identical);
}
