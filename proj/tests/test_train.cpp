#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "umc/train.hpp"

using namespace umc;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 32;
    cfg.d_model = 8;
    cfg.mlp_expansion = 2;
    cfg.n_layers_und = 2;
    cfg.n_layers_gen = 2;
    cfg.n_heads = 2;
    cfg.gen_output_dim = 4;
    cfg.gen_seq_len = 3;
    cfg.gen_steps = 2;
    cfg.max_seq_len = 32;
    cfg.seed = 3;
    return cfg;
}

SyntheticSpec tiny_spec() {
    SyntheticSpec spec;
    spec.n_classes = 4;
    spec.seq_len = 8;
    spec.period = 6;
    spec.prompt_len = 4;
    spec.gen_seq_len = 3;
    spec.gen_output_dim = 4;
    spec.vocab_size = 32;
    spec.n_train = 16;
    spec.n_heldout = 8;
    spec.seed = 3;
    return spec;
}

ModelConfig moe_ready_config() {
    ModelConfig cfg = tiny_config();
    cfg.n_layers_gen = 3;
    cfg.mlp_expansion = 2;  // dm = 16, divisible by 16 experts
    return cfg;
}

template <typename T>
void convert_middle_gen_layer(UnifiedToyModel<T>& model) {
    Rng rng(99);
    std::vector<double> scores(static_cast<size_t>(model.cfg.mlp_hidden()));
    for (auto& s : scores) s = rng.uniform();
    ImportanceReport rep;
    rep.comp = Component::Generation;
    rep.layer = 1;
    rep.neuron_scores = scores;
    MoeConfig mc;
    mc.n_experts = 16;
    mc.components = {Component::Generation};
    convert(model, {partition_experts(rep, 16)}, mc);
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.w_und = 0.0;
    cfg.w_gen = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("freeze rules per stage") {
    TrainConfig cfg;
    cfg.stage = Stage::Pretrain;
    CHECK(!param_frozen("gen.b1.moe.expert3.w_up", cfg));

    cfg.stage = Stage::ExpertFrozen;
    CHECK(param_frozen("gen.b1.moe.expert3.w_up", cfg));
    CHECK(param_frozen("gen.b1.moe.shared.w_down", cfg));
    CHECK(!param_frozen("gen.b1.moe.router_w", cfg));
    CHECK(!param_frozen("gen.b1.attn.wq", cfg));

    cfg.stage = Stage::MoeFull;
    cfg.scope = AdaptScope::UndGen;
    CHECK(!param_frozen("gen.b1.moe.expert3.w_up", cfg));
    CHECK(param_frozen("und.b1.moe.expert3.w_up", cfg));
    CHECK(!param_frozen("und.b1.attn.wq", cfg));

    cfg.scope = AdaptScope::Gen;
    CHECK(param_frozen("und.b1.attn.wq", cfg));
    CHECK(!param_frozen("gen.b1.moe.expert3.w_up", cfg));
}

TEST_CASE("a short run reduces the training loss") {
    UnifiedToyModel<float> model(tiny_config());
    auto ds = gen_dataset<float>(tiny_spec());
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.batch = 4;
    cfg.lr = 3e-3;
    cfg.log_every = 10;
    auto res = train(model, ds, cfg);
    REQUIRE(res.curve.size() >= 2);
    CHECK(res.curve.back().total < res.curve.front().total);
    CHECK(model.history == std::vector<std::string>{"pretrain"});
}

TEST_CASE("training with the same seed is reproducible") {
    auto ds = gen_dataset<float>(tiny_spec());
    UnifiedToyModel<float> a(tiny_config());
    UnifiedToyModel<float> b = a.clone();
    TrainConfig cfg;
    cfg.steps = 10;
    cfg.batch = 2;
    cfg.seed = 5;
    auto ra = train(a, ds, cfg);
    auto rb = train(b, ds, cfg);
    CHECK(ra.final_total == rb.final_total);
    auto pa = a.parameters(), pb = b.parameters();
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second.data() == pb[i].second.data());
}

TEST_CASE("expert-frozen adaptation leaves expert slices bit-identical") {
    UnifiedToyModel<float> model(moe_ready_config());
    convert_middle_gen_layer(model);
    std::map<std::string, std::vector<float>> before;
    for (const auto& [name, p] : model.parameters())
        if (is_expert_param(name)) before[name] = p.data();
    REQUIRE(!before.empty());

    auto ds = gen_dataset<float>(tiny_spec());
    TrainConfig cfg;
    cfg.stage = Stage::ExpertFrozen;
    cfg.steps = 8;
    cfg.batch = 2;
    auto res = train(model, ds, cfg);
    (void)res;

    bool router_moved = false;
    for (const auto& [name, p] : model.parameters()) {
        if (is_expert_param(name)) CHECK(p.data() == before.at(name));
        if (name.find("moe.router") != std::string::npos)
            for (float v : p.data()) router_moved = router_moved || v != 0.0f;
    }
    CHECK(router_moved);
    CHECK(model.history.back() == std::string("expert_frozen"));
}

TEST_CASE("stage ordering is enforced") {
    UnifiedToyModel<float> model(moe_ready_config());
    convert_middle_gen_layer(model);
    auto ds = gen_dataset<float>(tiny_spec());
    TrainConfig cfg;
    cfg.stage = Stage::MoeFull;
    cfg.steps = 2;
    cfg.batch = 2;
    CHECK_THROWS_AS(train(model, ds, cfg), ContractError);
    cfg.force = true;
    CHECK_NOTHROW(train(model, ds, cfg));

    // adaptation stages refuse a model without experts
    UnifiedToyModel<float> dense(tiny_config());
    TrainConfig ef;
    ef.stage = Stage::ExpertFrozen;
    ef.steps = 1;
    CHECK_THROWS_AS(train(dense, ds, ef), ContractError);
}

TEST_CASE("non-finite loss aborts training") {
    UnifiedToyModel<float> model(tiny_config());
    model.tok_embedding.at(0) = std::numeric_limits<float>::quiet_NaN();
    auto ds = gen_dataset<float>(tiny_spec());
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.batch = 2;
    CHECK_THROWS_AS(train(model, ds, cfg), ContractError);
}

TEST_CASE("loss curve lands in the CSV") {
    UnifiedToyModel<float> model(tiny_config());
    auto ds = gen_dataset<float>(tiny_spec());
    TrainConfig cfg;
    cfg.steps = 12;
    cfg.batch = 2;
    cfg.log_every = 4;
    cfg.csv_path = "loss_curve_test.csv";
    auto res = train(model, ds, cfg);

    std::ifstream in(cfg.csv_path);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,loss_total,loss_und,loss_gen");
    int rows = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++rows;
    CHECK(rows == static_cast<int>(res.curve.size()));
    in.close();
    std::remove(cfg.csv_path.c_str());
}

TEST_CASE("evaluation reports sane metrics and exact activation accounting") {
    UnifiedToyModel<float> model(moe_ready_config());
    auto ds = gen_dataset<float>(tiny_spec());

    auto dense_eval = evaluate(model, ds);
    CHECK(dense_eval.und_accuracy >= 0.0);
    CHECK(dense_eval.und_accuracy <= 1.0);
    CHECK(dense_eval.und_perplexity > 1.0);
    CHECK(dense_eval.moe_activated_fraction == 1.0);
    CHECK(dense_eval.params_activated == dense_eval.params_total);

    convert_middle_gen_layer(model);
    auto moe_eval = evaluate(model, ds);
    // 1 shared + 7 of 15 routed experts of equal size: exactly half activated
    CHECK(moe_eval.moe_activated_fraction == 0.5);
    CHECK(moe_eval.params_activated < moe_eval.params_total);
    CHECK(moe_eval.params_total > dense_eval.params_total);  // router weights were added
}

TEST_CASE("task weights gate which losses are optimized") {
    UnifiedToyModel<float> model(tiny_config());
    auto ds = gen_dataset<float>(tiny_spec());
    TrainConfig cfg;
    cfg.steps = 4;
    cfg.batch = 2;
    cfg.w_gen = 0.0;
    auto res = train(model, ds, cfg);
    for (const auto& row : res.curve) {
        CHECK(row.gen == 0.0);
        CHECK(row.total == doctest::Approx(row.und));
    }
}
