#pragma once

#include <string>

#include <json.hpp>

#include "umc/data.hpp"
#include "umc/importance.hpp"
#include "umc/trace.hpp"

namespace umc {

// JSON forms of the pipeline's intermediate artifacts. Loaders throw
// FormatError so a half-written or foreign file fails loudly.

inline nlohmann::json spec_to_json(const SyntheticSpec& s) {
    return {{"n_classes", s.n_classes},   {"seq_len", s.seq_len},
            {"period", s.period},         {"prompt_len", s.prompt_len},
            {"gen_seq_len", s.gen_seq_len}, {"gen_output_dim", s.gen_output_dim},
            {"vocab_size", s.vocab_size}, {"n_train", s.n_train},
            {"n_heldout", s.n_heldout},   {"seed", s.seed}};
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
    try {
        SyntheticSpec s;
        s.n_classes = j.at("n_classes").get<int>();
        s.seq_len = j.at("seq_len").get<int>();
        s.period = j.at("period").get<int>();
        s.prompt_len = j.at("prompt_len").get<int>();
        s.gen_seq_len = j.at("gen_seq_len").get<int>();
        s.gen_output_dim = j.at("gen_output_dim").get<int>();
        s.vocab_size = j.at("vocab_size").get<int>();
        s.n_train = j.at("n_train").get<int>();
        s.n_heldout = j.at("n_heldout").get<int>();
        s.seed = j.at("seed").get<std::uint64_t>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad dataset spec: ") + e.what());
    }
}

inline nlohmann::json trace_to_json(const ActivationTrace& t) {
    nlohmann::json j;
    j["kind"] = "activation_trace";
    j["options"] = {{"top_p", t.options.top_p}, {"per_token", t.options.per_token}};
    j["batch_id"] = t.batch_id;
    j["task"] = t.task;
    j["n_samples"] = t.n_samples;
    auto& cos = j["cos"] = nlohmann::json::array();
    for (const auto& [k, v] : t.cos)
        cos.push_back({{"component", std::get<0>(k)},
                       {"layer", std::get<1>(k)},
                       {"granularity", std::get<2>(k)},
                       {"sum", v.sum},
                       {"count", v.count}});
    auto& neurons = j["neurons"] = nlohmann::json::array();
    for (const auto& [k, v] : t.neurons)
        neurons.push_back({{"component", k.first},
                           {"layer", k.second},
                           {"abs_sum", v.abs_sum},
                           {"tokens", v.tokens}});
    auto& heads = j["heads"] = nlohmann::json::array();
    for (const auto& [k, v] : t.heads)
        heads.push_back({{"component", k.first},
                         {"layer", k.second},
                         {"norm_sum", v.norm_sum},
                         {"tokens", v.tokens}});
    auto& dyn = j["dynamics"] = nlohmann::json::array();
    for (const auto& [k, v] : t.dynamics)
        dyn.push_back({{"component", k.first},
                       {"layer", k.second},
                       {"top_count", v.top_count},
                       {"observations", v.observations}});
    return j;
}

inline ActivationTrace trace_from_json(const nlohmann::json& j) {
    try {
        if (j.value("kind", "") != "activation_trace")
            throw FormatError("not an activation trace file");
        ActivationTrace t;
        t.options.top_p = j.at("options").at("top_p").get<double>();
        t.options.per_token = j.at("options").at("per_token").get<bool>();
        t.batch_id = j.value("batch_id", "");
        t.task = j.value("task", "");
        t.n_samples = j.at("n_samples").get<long>();
        for (const auto& e : j.at("cos")) {
            auto& s = t.cos[{e.at("component").get<int>(), e.at("layer").get<int>(),
                             e.at("granularity").get<int>()}];
            s.sum = e.at("sum").get<double>();
            s.count = e.at("count").get<long>();
        }
        for (const auto& e : j.at("neurons")) {
            auto& s = t.neurons[{e.at("component").get<int>(), e.at("layer").get<int>()}];
            s.abs_sum = e.at("abs_sum").get<std::vector<double>>();
            s.tokens = e.at("tokens").get<long>();
        }
        for (const auto& e : j.at("heads")) {
            auto& s = t.heads[{e.at("component").get<int>(), e.at("layer").get<int>()}];
            s.norm_sum = e.at("norm_sum").get<std::vector<double>>();
            s.tokens = e.at("tokens").get<long>();
        }
        for (const auto& e : j.at("dynamics")) {
            auto& s = t.dynamics[{e.at("component").get<int>(), e.at("layer").get<int>()}];
            s.top_count = e.at("top_count").get<std::vector<long>>();
            s.observations = e.at("observations").get<long>();
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad activation trace: ") + e.what());
    }
}

inline nlohmann::json report_to_json(const ImportanceReport& r) {
    return {{"kind", "importance_report"},
            {"component", component_name(r.comp)},
            {"layer", r.layer},
            {"neuron_scores", r.neuron_scores},
            {"head_scores", r.head_scores},
            {"provenance", r.provenance},
            {"task", r.task}};
}

inline ImportanceReport report_from_json(const nlohmann::json& j) {
    try {
        if (j.value("kind", "") != "importance_report")
            throw FormatError("not an importance report file");
        ImportanceReport r;
        r.comp = component_from_name(j.at("component").get<std::string>());
        r.layer = j.at("layer").get<int>();
        r.neuron_scores = j.at("neuron_scores").get<std::vector<double>>();
        r.head_scores = j.value("head_scores", std::vector<double>{});
        r.provenance = j.value("provenance", "");
        r.task = j.value("task", "");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad importance report: ") + e.what());
    }
}

}  // namespace umc
