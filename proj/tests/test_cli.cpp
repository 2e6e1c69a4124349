#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kStore = "cli_test_store";

int run(const std::string& args, bool quiet = true) {
    std::string cmd = std::string(UMC_CLI_PATH) + " --store " + kStore + " " + args;
    if (quiet) cmd += " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

nlohmann::json read_json(const std::string& name) {
    std::ifstream in(fs::path(kStore) / name);
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

struct StoreFixture {
    StoreFixture() {
        fs::remove_all(kStore);
        fs::create_directories(kStore);
    }
    ~StoreFixture() { fs::remove_all(kStore); }
};

const std::string kSmallData =
    "gen-data --classes 4 --seq-len 10 --period 6 --train 16 --heldout 8 --vocab 32 "
    "--gen-seq-len 3 --gen-dim 4";
const std::string kSmallModel =
    "pretrain --d-model 8 --expansion 2 --layers-und 2 --layers-gen 3 --heads 2 --gen-steps 2 "
    "--steps 8 --batch 2";

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("no-such-command") == 2);
    CHECK(run("eval --no-such-flag") == 2);
}

TEST_CASE("bad option values surface as runtime failures") {
    StoreFixture fx;
    CHECK(run("prune --kind depth --granularity sideways") == 1);
}

TEST_CASE("runtime failures exit with code 1") {
    StoreFixture fx;
    CHECK(run("eval --model missing.umc --data missing.json") == 1);
    REQUIRE(run(kSmallData) == 0);
    // trace for a model that does not exist
    CHECK(run("calibrate --model missing.umc") == 1);
}

TEST_CASE("end-to-end pipeline through the store") {
    StoreFixture fx;
    REQUIRE(run(kSmallData) == 0);
    CHECK(read_json("data.json").at("kind") == "dataset_spec");

    REQUIRE(run(kSmallModel) == 0);
    CHECK(fs::exists(fs::path(kStore) / "model.umc"));

    REQUIRE(run("calibrate --task und --count 8 --out trace_und.json") == 0);
    REQUIRE(run("calibrate --task gen --count 8 --out trace_gen.json") == 0);
    CHECK(read_json("trace_und.json").at("task") == "understanding");

    REQUIRE(run("score --trace trace_und.json --component und --layer 0 --heads "
                "--out rep_und.json --cosines cos.csv") == 0);
    REQUIRE(run("score --trace trace_gen.json --component und --layer 0 "
                "--out rep_gen.json") == 0);
    {
        std::ifstream cos(fs::path(kStore) / "cos.csv");
        std::string header;
        std::getline(cos, header);
        CHECK(header == "component,layer,granularity,score");
    }

    CHECK(run("analyze-overlap --report-a rep_und.json --report-b rep_gen.json") == 0);
    CHECK(run("analyze-dynamics --trace trace_gen.json --out dyn.csv") == 0);

    REQUIRE(run("prune --kind width --report rep_und.json --ratio 0.25 "
                "--plan width.jsonl --out pruned.umc") == 0);
    CHECK(fs::exists(fs::path(kStore) / "width.jsonl"));
    CHECK(run("eval --model pruned.umc --label pruned --out eval_pruned.json") == 0);

    REQUIRE(run("score --trace trace_gen.json --component gen --layer 1 "
                "--out rep_gen_l1.json") == 0);
    REQUIRE(run("partition-experts --report rep_gen_l1.json --experts 16 "
                "--out part.json") == 0);
    REQUIRE(run("convert --model model.umc --partition part.json --out moe.umc") == 0);

    // full adaptation before the expert-frozen stage is refused
    CHECK(run("adapt --model moe.umc --stage full --steps 2 --batch 2 --out bad.umc") == 1);
    REQUIRE(run("adapt --model moe.umc --stage expert-frozen --steps 3 --batch 2 "
                "--out ef.umc") == 0);
    REQUIRE(run("adapt --model ef.umc --stage full --steps 3 --batch 2 --out full.umc") == 0);

    REQUIRE(run("eval --model full.umc --label full --out eval_full.json") == 0);
    auto ev = read_json("eval_full.json");
    CHECK(ev.at("moe_activated_fraction").get<double>() == 0.5);

    CHECK(run("report --eval eval_pruned.json --eval eval_full.json --out summary.csv") == 0);
    {
        std::ifstream sum(fs::path(kStore) / "summary.csv");
        std::string header, r1, r2;
        std::getline(sum, header);
        std::getline(sum, r1);
        std::getline(sum, r2);
        CHECK(header.rfind("label,file,", 0) == 0);
        CHECK(r1.rfind("pruned,", 0) == 0);
        CHECK(r2.rfind("full,", 0) == 0);
    }
}

TEST_CASE("artifacts from different configurations refuse to mix") {
    StoreFixture fx;
    REQUIRE(run(kSmallData) == 0);
    REQUIRE(run(kSmallModel) == 0);
    REQUIRE(run("eval --model model.umc --label a --out eval_a.json") == 0);
    // a second model with a different width
    REQUIRE(run("pretrain --d-model 16 --expansion 2 --layers-und 2 --layers-gen 3 --heads 2 "
                "--gen-steps 2 --steps 8 --batch 2 --out model_b.umc") == 0);
    REQUIRE(run("eval --model model_b.umc --label b --out eval_b.json") == 0);
    CHECK(run("report --eval eval_a.json --eval eval_b.json") == 1);
    CHECK(run("report --eval eval_a.json --eval eval_b.json --allow-mixed") == 0);

    // a trace recorded on model A will not score model B
    REQUIRE(run("calibrate --model model.umc --task und --count 8 --out trace_a.json") == 0);
    CHECK(run("score --model model_b.umc --trace trace_a.json --component und --layer 0") == 1);
}
