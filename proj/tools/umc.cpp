// Command-line driver for the compression pipeline: synthetic data, pretraining,
// activation calibration, importance scoring, pruning, expert conversion,
// adaptation, and evaluation. Artifacts live in a store directory and carry the
// model's configuration hash so stages from different runs refuse to mix.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "umc/analysis.hpp"
#include "umc/checkpoint.hpp"
#include "umc/data.hpp"
#include "umc/importance.hpp"
#include "umc/model.hpp"
#include "umc/moe.hpp"
#include "umc/serialize.hpp"
#include "umc/surgery.hpp"
#include "umc/trace.hpp"
#include "umc/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace umc;

namespace {

std::string g_store;

// Relative paths land inside the store; absolute paths pass through.
std::string in_store(const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    fs::create_directories(g_store);
    return (fs::path(g_store) / path).string();
}

json read_json(const std::string& path) {
    std::ifstream in(in_store(path));
    if (!in) throw InputError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(in_store(path));
    if (!out) throw InputError("cannot write " + path);
    out << j.dump(2) << "\n";
}

Dataset<float> load_dataset(const std::string& path) {
    return gen_dataset<float>(spec_from_json(read_json(path)));
}

void check_hash(const json& artifact, const std::string& model_hash, const std::string& what) {
    const std::string h = artifact.value("config_hash", "");
    if (!h.empty() && h != model_hash)
        throw InputError(what + " was produced for a different model configuration (" + h +
                         " vs " + model_hash + ")");
}

struct ScoreArgs {
    std::string model, trace, out, cosines;
    std::string component = "gen";
    int layer = 0;
    bool with_heads = false;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified-model compression pipeline"};
    app.require_subcommand(1);

    const char* env_store = std::getenv("UMC_STORE");
    g_store = env_store ? env_store : "umc_store";
    app.add_option("--store", g_store, "artifact directory (default $UMC_STORE or ./umc_store)");

    // ---- gen-data ----
    auto* cmd_data = app.add_subcommand("gen-data", "write a synthetic dataset spec");
    SyntheticSpec spec;
    std::string data_out = "data.json";
    cmd_data->add_option("--classes", spec.n_classes);
    cmd_data->add_option("--seq-len", spec.seq_len);
    cmd_data->add_option("--period", spec.period);
    cmd_data->add_option("--prompt-len", spec.prompt_len);
    cmd_data->add_option("--gen-seq-len", spec.gen_seq_len);
    cmd_data->add_option("--gen-dim", spec.gen_output_dim);
    cmd_data->add_option("--vocab", spec.vocab_size);
    cmd_data->add_option("--train", spec.n_train);
    cmd_data->add_option("--heldout", spec.n_heldout);
    cmd_data->add_option("--seed", spec.seed);
    cmd_data->add_option("--out", data_out);

    // ---- pretrain ----
    auto* cmd_pre = app.add_subcommand("pretrain", "train a fresh dense model");
    std::string pre_data = "data.json", pre_out = "model.umc", pre_curve;
    ModelConfig mc;
    TrainConfig pre_tc;
    cmd_pre->add_option("--data", pre_data);
    cmd_pre->add_option("--d-model", mc.d_model);
    cmd_pre->add_option("--expansion", mc.mlp_expansion);
    cmd_pre->add_option("--layers-und", mc.n_layers_und);
    cmd_pre->add_option("--layers-gen", mc.n_layers_gen);
    cmd_pre->add_option("--heads", mc.n_heads);
    cmd_pre->add_option("--gen-steps", mc.gen_steps);
    cmd_pre->add_option("--max-seq", mc.max_seq_len);
    cmd_pre->add_option("--model-seed", mc.seed);
    cmd_pre->add_option("--steps", pre_tc.steps);
    cmd_pre->add_option("--batch", pre_tc.batch);
    cmd_pre->add_option("--lr", pre_tc.lr);
    cmd_pre->add_option("--w-und", pre_tc.w_und);
    cmd_pre->add_option("--w-gen", pre_tc.w_gen);
    cmd_pre->add_option("--seed", pre_tc.seed);
    cmd_pre->add_option("--curve", pre_curve, "loss curve CSV (step,loss_total,loss_und,loss_gen)");
    cmd_pre->add_option("--out", pre_out);

    // ---- calibrate ----
    auto* cmd_cal = app.add_subcommand("calibrate", "record activation statistics");
    std::string cal_model = "model.umc", cal_data = "data.json", cal_out = "trace.json";
    std::string cal_task = "und";
    int cal_count = 16, cal_timesteps = 8;
    std::uint64_t cal_seed = 0;
    TraceOptions cal_opts;
    cmd_cal->add_option("--model", cal_model);
    cmd_cal->add_option("--data", cal_data);
    cmd_cal->add_option("--task", cal_task, "und or gen");
    cmd_cal->add_option("--count", cal_count);
    cmd_cal->add_option("--timesteps", cal_timesteps);
    cmd_cal->add_option("--seed", cal_seed);
    cmd_cal->add_option("--top-p", cal_opts.top_p);
    cmd_cal->add_option("--out", cal_out);

    // ---- score ----
    auto* cmd_score = app.add_subcommand("score", "importance scores from a trace");
    ScoreArgs sa;
    sa.model = "model.umc";
    sa.trace = "trace.json";
    sa.out = "report.json";
    cmd_score->add_option("--model", sa.model);
    cmd_score->add_option("--trace", sa.trace);
    cmd_score->add_option("--component", sa.component, "und or gen");
    cmd_score->add_option("--layer", sa.layer);
    cmd_score->add_flag("--heads", sa.with_heads, "also score attention heads");
    cmd_score->add_option("--cosines", sa.cosines,
                          "layer cosine CSV (component,layer,granularity,score)");
    cmd_score->add_option("--out", sa.out);

    // ---- analyze-overlap ----
    auto* cmd_ov = app.add_subcommand("analyze-overlap", "task overlap of two reports");
    std::string ov_a, ov_b, ov_out;
    double ov_p = 0.5;
    cmd_ov->add_option("--report-a", ov_a)->required();
    cmd_ov->add_option("--report-b", ov_b)->required();
    cmd_ov->add_option("--p", ov_p);
    cmd_ov->add_option("--out", ov_out,
                       "CSV (component,layer,p,frac_a_only,frac_b_only,frac_shared,union_size); "
                       "empty prints to stdout");

    // ---- analyze-dynamics ----
    auto* cmd_dyn = app.add_subcommand("analyze-dynamics", "activation dynamics of a trace");
    std::string dyn_trace = "trace.json", dyn_out;
    cmd_dyn->add_option("--trace", dyn_trace);
    cmd_dyn->add_option("--out", dyn_out,
                        "CSV (component,layer,observations,frac_always,frac_inactive,"
                        "frac_dependent); empty prints to stdout");

    // ---- prune ----
    auto* cmd_prune = app.add_subcommand("prune", "plan and apply structured removal");
    std::string pr_model = "model.umc", pr_out = "pruned.umc", pr_plan = "plan.jsonl";
    std::string pr_kind = "depth", pr_gran = "block", pr_trace;
    std::vector<std::string> pr_reports;
    std::vector<int> pr_protect;
    int pr_k = 1;
    double pr_ratio = 0.25;
    cmd_prune->add_option("--model", pr_model);
    cmd_prune->add_option("--kind", pr_kind, "depth, width, or heads");
    cmd_prune->add_option("--granularity", pr_gran, "depth only: block, mlp, or attn");
    cmd_prune->add_option("--trace", pr_trace, "depth only: calibration trace");
    cmd_prune->add_option("--report", pr_reports, "width/heads: importance reports");
    cmd_prune->add_option("--k", pr_k, "depth only: layers to drop");
    cmd_prune->add_option("--ratio", pr_ratio, "width/heads: fraction to drop per layer");
    cmd_prune->add_option("--protect", pr_protect, "layer indices to leave untouched");
    cmd_prune->add_option("--plan", pr_plan);
    cmd_prune->add_option("--out", pr_out);

    // ---- partition-experts ----
    auto* cmd_part = app.add_subcommand("partition-experts", "split neurons into experts");
    std::string part_report = "report.json", part_out = "partition.json";
    int part_experts = 16;
    cmd_part->add_option("--report", part_report);
    cmd_part->add_option("--experts", part_experts);
    cmd_part->add_option("--out", part_out);

    // ---- convert ----
    auto* cmd_conv = app.add_subcommand("convert", "replace dense MLPs with experts");
    std::string conv_model = "model.umc", conv_out = "moe.umc";
    std::vector<std::string> conv_parts;
    std::vector<std::string> conv_comps{"gen"};
    MoeConfig conv_cfg;
    bool conv_edges = false;
    cmd_conv->add_option("--model", conv_model);
    cmd_conv->add_option("--partition", conv_parts, "partition files (one per layer)")->required();
    cmd_conv->add_option("--experts", conv_cfg.n_experts);
    cmd_conv->add_option("--top-k", conv_cfg.top_k, "routed experts per token; -1 derives it");
    cmd_conv->add_option("--activation-ratio", conv_cfg.activation_ratio);
    cmd_conv->add_option("--component", conv_comps, "und and/or gen");
    cmd_conv->add_flag("--include-edges", conv_edges, "also convert first and last layers");
    cmd_conv->add_option("--out", conv_out);

    // ---- adapt ----
    auto* cmd_adapt = app.add_subcommand("adapt", "post-surgery training stage");
    std::string ad_model = "moe.umc", ad_data = "data.json", ad_out = "adapted.umc", ad_curve;
    std::string ad_stage = "expert-frozen", ad_scope = "undgen";
    TrainConfig ad_tc;
    ad_tc.steps = 300;
    cmd_adapt->add_option("--model", ad_model);
    cmd_adapt->add_option("--data", ad_data);
    cmd_adapt->add_option("--stage", ad_stage, "dense-finetune, expert-frozen, or full");
    cmd_adapt->add_option("--scope", ad_scope, "gen or undgen");
    cmd_adapt->add_option("--steps", ad_tc.steps);
    cmd_adapt->add_option("--batch", ad_tc.batch);
    cmd_adapt->add_option("--lr", ad_tc.lr);
    cmd_adapt->add_option("--w-und", ad_tc.w_und);
    cmd_adapt->add_option("--w-gen", ad_tc.w_gen);
    cmd_adapt->add_option("--seed", ad_tc.seed);
    cmd_adapt->add_flag("--force", ad_tc.force, "skip the stage-ordering check");
    cmd_adapt->add_option("--curve", ad_curve);
    cmd_adapt->add_option("--out", ad_out);

    // ---- eval ----
    auto* cmd_eval = app.add_subcommand("eval", "held-out metrics");
    std::string ev_model = "model.umc", ev_data = "data.json", ev_out;
    std::string ev_label;
    std::uint64_t ev_seed = 1234;
    cmd_eval->add_option("--model", ev_model);
    cmd_eval->add_option("--data", ev_data);
    cmd_eval->add_option("--seed", ev_seed, "noise seed for sampling");
    cmd_eval->add_option("--label", ev_label, "free-form tag copied into the artifact");
    cmd_eval->add_option("--out", ev_out, "metrics JSON; empty prints to stdout only");

    // ---- report ----
    auto* cmd_rep = app.add_subcommand("report", "summarize evaluation artifacts");
    std::vector<std::string> rep_evals;
    std::string rep_out;
    bool rep_mixed = false;
    cmd_rep->add_option("--eval", rep_evals, "eval JSON files")->required();
    cmd_rep->add_flag("--allow-mixed", rep_mixed, "permit differing model configurations");
    cmd_rep->add_option("--out", rep_out,
                        "CSV (label,file,und_accuracy,und_perplexity,gen_velocity_mse,"
                        "gen_fidelity,params_total,params_activated,moe_activated_fraction); "
                        "empty prints to stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (*cmd_data) {
            spec.validate();
            json j = spec_to_json(spec);
            j["kind"] = "dataset_spec";
            write_json(data_out, j);
            auto ds = load_dataset(data_out);
            std::cout << "wrote " << data_out << ": " << ds.und_train.size() << " train / "
                      << ds.und_heldout.size() << " held-out per task, " << spec.n_classes
                      << " classes\n";
        } else if (*cmd_pre) {
            auto ds = load_dataset(pre_data);
            mc.vocab_size = ds.spec.vocab_size;
            mc.gen_output_dim = ds.spec.gen_output_dim;
            mc.gen_seq_len = ds.spec.gen_seq_len;
            if (mc.max_seq_len < ds.spec.seq_len) mc.max_seq_len = ds.spec.seq_len;
            UnifiedToyModel<float> model(mc);
            pre_tc.csv_path = pre_curve.empty() ? "" : in_store(pre_curve);
            auto res = train(model, ds, pre_tc);
            save_model(model, in_store(pre_out));
            auto ev = evaluate(model, ds);
            std::cout << "pretrained " << pre_tc.steps << " steps, final loss "
                      << res.final_total << ", held-out accuracy " << ev.und_accuracy
                      << ", fidelity " << ev.gen_fidelity << "; saved " << pre_out << "\n";
        } else if (*cmd_cal) {
            auto model = load_model<float>(in_store(cal_model));
            auto ds = load_dataset(cal_data);
            auto batch = make_calibration(ds, task_from_name(cal_task), cal_count, cal_seed,
                                          cal_timesteps);
            auto trace = record(model, ds, batch, cal_opts);
            json j = trace_to_json(trace);
            j["config_hash"] = config_hash(model.cfg);
            j["seed"] = cal_seed;
            write_json(cal_out, j);
            std::cout << "recorded " << trace.n_samples << " " << cal_task
                      << " samples into " << cal_out << "\n";
        } else if (*cmd_score) {
            auto model = load_model<float>(in_store(sa.model));
            json tj = read_json(sa.trace);
            check_hash(tj, config_hash(model.cfg), sa.trace);
            auto trace = trace_from_json(tj);
            const Component comp = component_from_name(sa.component);
            auto rep = importance_report(trace, model, comp, sa.layer, sa.with_heads);
            json j = report_to_json(rep);
            j["config_hash"] = config_hash(model.cfg);
            write_json(sa.out, j);
            if (!sa.cosines.empty()) {
                std::ofstream csv(in_store(sa.cosines));
                if (!csv) throw InputError("cannot write " + sa.cosines);
                csv << "component,layer,granularity,score\n";
                for (Granularity g : {Granularity::Block, Granularity::Mlp, Granularity::Attn})
                    for (const auto& s : layer_scores(trace, g))
                        csv << component_name(s.comp) << "," << s.layer << ","
                            << granularity_name(g) << "," << s.score << "\n";
            }
            std::cout << "scored " << sa.component << " layer " << sa.layer << " into " << sa.out
                      << "\n";
        } else if (*cmd_ov) {
            auto a = report_from_json(read_json(ov_a));
            auto b = report_from_json(read_json(ov_b));
            auto rep = overlap(a, b, ov_p);
            std::ostringstream row;
            row << "component,layer,p,frac_a_only,frac_b_only,frac_shared,union_size\n"
                << component_name(rep.comp) << "," << rep.layer << "," << rep.p << ","
                << rep.frac_und_only << "," << rep.frac_gen_only << "," << rep.frac_shared << ","
                << rep.union_size << "\n";
            if (ov_out.empty()) {
                std::cout << row.str();
            } else {
                std::ofstream csv(in_store(ov_out));
                if (!csv) throw InputError("cannot write " + ov_out);
                csv << row.str();
            }
        } else if (*cmd_dyn) {
            auto trace = trace_from_json(read_json(dyn_trace));
            std::ostringstream rows;
            rows << "component,layer,observations,frac_always,frac_inactive,frac_dependent\n";
            for (const auto& d : dynamics(trace))
                rows << component_name(d.comp) << "," << d.layer << "," << d.observations << ","
                     << d.frac_always_active << "," << d.frac_inactive << "," << d.frac_dependent
                     << "\n";
            if (dyn_out.empty()) {
                std::cout << rows.str();
            } else {
                std::ofstream csv(in_store(dyn_out));
                if (!csv) throw InputError("cannot write " + dyn_out);
                csv << rows.str();
            }
        } else if (*cmd_prune) {
            auto model = load_model<float>(in_store(pr_model));
            PruningPlan plan;
            if (pr_kind == "depth") {
                if (pr_trace.empty()) throw InputError("depth pruning needs --trace");
                json tj = read_json(pr_trace);
                check_hash(tj, config_hash(model.cfg), pr_trace);
                auto trace = trace_from_json(tj);
                plan = plan_depth(layer_scores(trace, granularity_from_name(pr_gran)), pr_k);
            } else {
                if (pr_reports.empty()) throw InputError(pr_kind + " pruning needs --report");
                std::vector<ImportanceReport> reps;
                for (const auto& path : pr_reports) {
                    json rj = read_json(path);
                    check_hash(rj, config_hash(model.cfg), path);
                    reps.push_back(report_from_json(rj));
                }
                const std::set<int> prot(pr_protect.begin(), pr_protect.end());
                plan = pr_kind == "width" ? plan_width(reps, pr_ratio, prot)
                                          : plan_heads(reps, pr_ratio, prot);
                if (pr_kind != "width" && pr_kind != "heads")
                    throw InputError("unknown prune kind '" + pr_kind + "'");
            }
            {
                std::ofstream pf(in_store(pr_plan));
                if (!pf) throw InputError("cannot write " + pr_plan);
                pf << plan.to_jsonl();
            }
            apply(model, plan);
            save_model(model, in_store(pr_out));
            std::cout << "applied " << plan.records.size() << " " << pr_kind
                      << " removals; saved " << pr_out << " and " << pr_plan << "\n";
        } else if (*cmd_part) {
            auto rep = report_from_json(read_json(part_report));
            auto part = partition_experts(rep, part_experts);
            json j = checkpoint_detail::partition_json(part);
            j["kind"] = "expert_partition";
            j["config_hash"] = read_json(part_report).value("config_hash", "");
            write_json(part_out, j);
            std::cout << "partitioned " << part.width() << " neurons into " << part_experts
                      << " experts (" << part.n_shared << " shared); saved " << part_out << "\n";
        } else if (*cmd_conv) {
            auto model = load_model<float>(in_store(conv_model));
            std::vector<ExpertPartition> parts;
            for (const auto& path : conv_parts) {
                json pj = read_json(path);
                check_hash(pj, config_hash(model.cfg), path);
                parts.push_back(checkpoint_detail::partition_from_json(pj));
            }
            conv_cfg.exclude_first_last = !conv_edges;
            conv_cfg.components.clear();
            for (const auto& c : conv_comps)
                conv_cfg.components.push_back(component_from_name(c));
            convert(model, parts, conv_cfg);
            save_model(model, in_store(conv_out));
            std::cout << "converted " << parts.size() << " layers to " << conv_cfg.n_experts
                      << " experts, top-k " << conv_cfg.derived_top_k() << "; saved " << conv_out
                      << "\n";
        } else if (*cmd_adapt) {
            auto model = load_model<float>(in_store(ad_model));
            auto ds = load_dataset(ad_data);
            if (ad_stage == "dense-finetune") ad_tc.stage = Stage::DenseFinetune;
            else if (ad_stage == "expert-frozen") ad_tc.stage = Stage::ExpertFrozen;
            else if (ad_stage == "full") ad_tc.stage = Stage::MoeFull;
            else throw InputError("unknown stage '" + ad_stage + "'");
            ad_tc.scope = ad_scope == "gen" ? AdaptScope::Gen : AdaptScope::UndGen;
            ad_tc.csv_path = ad_curve.empty() ? "" : in_store(ad_curve);
            auto res = train(model, ds, ad_tc);
            save_model(model, in_store(ad_out));
            std::cout << ad_stage << " adaptation, " << ad_tc.steps << " steps, final loss "
                      << res.final_total << "; saved " << ad_out << "\n";
        } else if (*cmd_eval) {
            auto model = load_model<float>(in_store(ev_model));
            auto ds = load_dataset(ev_data);
            auto ev = evaluate(model, ds, ev_seed);
            json j{{"kind", "eval"},
                   {"label", ev_label},
                   {"config_hash", config_hash(model.cfg)},
                   {"seed", ev_seed},
                   {"und_accuracy", ev.und_accuracy},
                   {"und_perplexity", ev.und_perplexity},
                   {"gen_velocity_mse", ev.gen_velocity_mse},
                   {"gen_fidelity", ev.gen_fidelity},
                   {"params_total", ev.params_total},
                   {"params_activated", ev.params_activated},
                   {"moe_activated_fraction", ev.moe_activated_fraction}};
            if (!ev_out.empty()) write_json(ev_out, j);
            std::cout << "accuracy " << ev.und_accuracy << ", perplexity " << ev.und_perplexity
                      << ", velocity mse " << ev.gen_velocity_mse << ", fidelity "
                      << ev.gen_fidelity << ", activated " << ev.params_activated << "/"
                      << ev.params_total << " (moe fraction " << ev.moe_activated_fraction
                      << ")\n";
        } else if (*cmd_rep) {
            std::string hash;
            std::ostringstream rows;
            rows << "label,file,und_accuracy,und_perplexity,gen_velocity_mse,gen_fidelity,"
                    "params_total,params_activated,moe_activated_fraction\n";
            for (const auto& path : rep_evals) {
                json j = read_json(path);
                if (j.value("kind", "") != "eval")
                    throw FormatError(path + " is not an eval artifact");
                const std::string h = j.value("config_hash", "");
                if (hash.empty()) hash = h;
                else if (h != hash && !rep_mixed)
                    throw InputError(path + " comes from a different model configuration; "
                                            "pass --allow-mixed to override");
                rows << j.value("label", "") << "," << path << ","
                     << j.at("und_accuracy").get<double>() << ","
                     << j.at("und_perplexity").get<double>() << ","
                     << j.at("gen_velocity_mse").get<double>() << ","
                     << j.at("gen_fidelity").get<double>() << ","
                     << j.at("params_total").get<long>() << ","
                     << j.at("params_activated").get<long>() << ","
                     << j.at("moe_activated_fraction").get<double>() << "\n";
            }
            if (rep_out.empty()) {
                std::cout << rows.str();
            } else {
                std::ofstream csv(in_store(rep_out));
                if (!csv) throw InputError("cannot write " + rep_out);
                csv << rows.str();
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
