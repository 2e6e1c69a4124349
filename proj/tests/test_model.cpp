#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "umc/model.hpp"

using namespace umc;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 16;
    cfg.d_model = 8;
    cfg.mlp_expansion = 2;
    cfg.n_layers_und = 2;
    cfg.n_layers_gen = 2;
    cfg.n_heads = 2;
    cfg.gen_output_dim = 4;
    cfg.gen_seq_len = 3;
    cfg.gen_steps = 2;
    cfg.max_seq_len = 12;
    cfg.seed = 42;
    return cfg;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config();
    cfg.n_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(UnifiedToyModel<float>{cfg}, ConfigError);
    cfg = tiny_config();
    cfg.n_layers_und = 1;
    CHECK_THROWS_AS(UnifiedToyModel<float>{cfg}, ConfigError);
}

TEST_CASE("understanding forward shape and input checks") {
    UnifiedToyModel<float> model(tiny_config());
    auto out = model.forward_und({3});
    CHECK(out.logits.shape() == std::vector<int>{1, 16});
    CHECK(out.features.shape() == std::vector<int>{1, 8});

    CHECK_THROWS_AS(model.forward_und({99}), InputError);
    CHECK_THROWS_AS(model.forward_und({}), InputError);
    CHECK_THROWS_AS(model.forward_und(std::vector<int>(13, 1)), InputError);
}

TEST_CASE("causality: suffix perturbation leaves earlier logits unchanged") {
    UnifiedToyModel<float> model(tiny_config());
    std::vector<int> a{1, 2, 3, 4, 5, 6};
    std::vector<int> b{1, 2, 3, 9, 8, 7};  // differs from position 3 on
    auto la = model.forward_und(a).logits;
    auto lb = model.forward_und(b).logits;
    for (int t = 0; t < 3; ++t)
        for (int v = 0; v < 16; ++v) CHECK(la.at(t, v) == lb.at(t, v));
}

TEST_CASE("generation forward contracts") {
    UnifiedToyModel<float> model(tiny_config());
    auto features = model.forward_und({1, 2, 3}).features;
    Tensor<float> x_t({3, 4});
    auto v = model.forward_gen(features, x_t, 0.5);
    CHECK(v.shape() == x_t.shape());

    // zero-initialized output projection: untrained velocity is exactly zero
    for (long i = 0; i < v.numel(); ++i) CHECK(v.at(i) == 0.0f);

    CHECK_THROWS_AS(model.forward_gen(features, x_t, 1.5), InputError);
    CHECK_THROWS_AS(model.forward_gen(Tensor<float>({3, 5}), x_t, 0.5), ShapeError);
    CHECK_THROWS_AS(model.forward_gen(features, Tensor<float>({2, 4}), 0.5), ShapeError);
}

TEST_CASE("sampling is deterministic and Euler-consistent at K=1") {
    ModelConfig cfg = tiny_config();
    cfg.gen_steps = 1;
    UnifiedToyModel<float> model(cfg);
    std::vector<int> tokens{1, 2, 3};

    auto s1 = model.sample_gen(tokens, 7);
    auto s2 = model.sample_gen(tokens, 7);
    CHECK(s1.data() == s2.data());

    auto features = model.forward_und(tokens, nullptr, ServeTask::Generation).features;
    Rng rng(7);
    Tensor<float> x0 = Tensor<float>::randn({cfg.gen_seq_len, cfg.gen_output_dim}, rng, 1.0);
    auto v = model.forward_gen(features, x0, 0.0);
    for (long i = 0; i < x0.numel(); ++i)
        CHECK(s1.at(i) == doctest::Approx(x0.at(i) + v.at(i)));
}

TEST_CASE("understanding loss sends no gradient into generation parameters") {
    UnifiedToyModel<double> model(tiny_config());
    {
        GradientTape<double> tape;
        auto out = model.forward_und({1, 2, 3, 4});
        auto loss = cross_entropy(out.logits, {2, 3, 4, 5});
        tape.backward(loss);
    }
    for (const auto& [name, t] : model.parameters()) {
        if (name.rfind("gen.", 0) == 0) {
            const auto* g = t.grad_if();
            bool zero = true;
            if (g)
                for (double v : *g) zero = zero && v == 0.0;
            CHECK(zero);
        }
    }
    // understanding parameters do receive gradient
    bool some_nonzero = false;
    for (const auto& [name, t] : model.parameters())
        if (name.rfind("und.", 0) == 0 && t.grad_if())
            for (double v : *t.grad_if()) some_nonzero = some_nonzero || v != 0.0;
    CHECK(some_nonzero);
}

TEST_CASE("generation loss reaches understanding only via the conditioning path") {
    UnifiedToyModel<double> model(tiny_config());
    // make out_proj nonzero so gradients flow
    Rng rng(1);
    model.gen_out_proj = Tensor<double>::randn({4, 8}, rng, 0.1, true);
    {
        GradientTape<double> tape;
        auto features = model.forward_und({1, 2, 3}, nullptr, ServeTask::Generation).features;
        Tensor<double> x_t = Tensor<double>::randn({3, 4}, rng, 1.0);
        auto v = model.forward_gen(features, x_t, 0.3);
        auto loss = mse_loss(v, Tensor<double>::zeros({3, 4}));
        tape.backward(loss);
    }
    // vocab head is not on the conditioning path
    const auto* hg = model.vocab_head.grad_if();
    bool head_zero = true;
    if (hg)
        for (double v : *hg) head_zero = head_zero && v == 0.0;
    CHECK(head_zero);
    // token embedding is on the conditioning path
    bool emb_nonzero = false;
    if (model.tok_embedding.grad_if())
        for (double v : *model.tok_embedding.grad_if()) emb_nonzero = emb_nonzero || v != 0.0;
    CHECK(emb_nonzero);
}

TEST_CASE("clone is deep and bit-identical") {
    UnifiedToyModel<float> model(tiny_config());
    auto copy = model.clone();
    auto pa = model.parameters();
    auto pb = copy.parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second.data() == pb[i].second.data());
        CHECK(!pa[i].second.same_storage(pb[i].second));
    }
    copy.tok_embedding.at(0) += 1.0f;
    CHECK(model.tok_embedding.at(0) != copy.tok_embedding.at(0));
}
