#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "umc/model.hpp"

namespace umc {

// Container layout: "UMC1" magic, u32 format version, u64 JSON header length,
// the header, then the raw parameter payload in header order. The header
// carries the full topology explicitly (including expert partitions), so a
// checkpoint reloads without replaying any surgery.
namespace checkpoint_detail {

constexpr char kMagic[4] = {'U', 'M', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
const char* dtype_name() {
    if constexpr (sizeof(T) == 4) return "f32";
    else return "f64";
}

inline nlohmann::json config_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
            {"mlp_expansion", c.mlp_expansion}, {"n_layers_und", c.n_layers_und},
            {"n_layers_gen", c.n_layers_gen},   {"n_heads", c.n_heads},
            {"gen_output_dim", c.gen_output_dim}, {"gen_seq_len", c.gen_seq_len},
            {"gen_steps", c.gen_steps},     {"max_seq_len", c.max_seq_len},
            {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.mlp_expansion = j.at("mlp_expansion").get<int>();
    c.n_layers_und = j.at("n_layers_und").get<int>();
    c.n_layers_gen = j.at("n_layers_gen").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.gen_output_dim = j.at("gen_output_dim").get<int>();
    c.gen_seq_len = j.at("gen_seq_len").get<int>();
    c.gen_steps = j.at("gen_steps").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json partition_json(const ExpertPartition& p) {
    return {{"component", component_name(p.comp)}, {"layer", p.layer},
            {"n_experts", p.n_experts},           {"n_shared", p.n_shared},
            {"expert_size", p.expert_size},       {"shared", p.shared},
            {"routed", p.routed},                 {"source_report", p.source_report}};
}

inline ExpertPartition partition_from_json(const nlohmann::json& j) {
    ExpertPartition p;
    p.comp = component_from_name(j.at("component").get<std::string>());
    p.layer = j.at("layer").get<int>();
    p.n_experts = j.at("n_experts").get<int>();
    p.n_shared = j.at("n_shared").get<int>();
    p.expert_size = j.at("expert_size").get<int>();
    p.shared = j.at("shared").get<std::vector<int>>();
    p.routed = j.at("routed").get<std::vector<std::vector<int>>>();
    p.source_report = j.value("source_report", "");
    p.validate();
    return p;
}

template <typename T>
nlohmann::json block_json(const Block<T>& b) {
    nlohmann::json j;
    j["has_attn"] = b.self_attn.has_value();
    if (b.self_attn) {
        j["n_heads"] = b.self_attn->n_heads;
        j["head_dim"] = b.self_attn->head_dim;
    }
    j["has_cross"] = b.cross_attn.has_value();
    if (std::holds_alternative<std::monostate>(b.mlp)) {
        j["mlp"] = "none";
    } else if (std::holds_alternative<MlpLayer<T>>(b.mlp)) {
        j["mlp"] = "dense";
        j["mlp_hidden"] = std::get<MlpLayer<T>>(b.mlp).hidden();
    } else {
        const auto& moe = std::get<MoeLayer<T>>(b.mlp);
        j["mlp"] = "moe";
        j["partition"] = partition_json(moe.part);
        j["top_k"] = moe.top_k;
    }
    return j;
}

}  // namespace checkpoint_detail

// Stable fingerprint of a model configuration (FNV-1a over its JSON form);
// artifacts derived from different configurations refuse to mix.
inline std::string config_hash(const ModelConfig& cfg) {
    const std::string s = checkpoint_detail::config_json(cfg).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

template <typename T>
void save_model(const UnifiedToyModel<T>& model, const std::string& path) {
    const auto params = model.parameters();
    nlohmann::json header;
    header["dtype"] = checkpoint_detail::dtype_name<T>();
    header["config"] = checkpoint_detail::config_json(model.cfg);
    header["config_hash"] = config_hash(model.cfg);
    header["history"] = model.history;
    nlohmann::json und_topo = nlohmann::json::array(), gen_topo = nlohmann::json::array();
    for (const auto& b : model.und_blocks) und_topo.push_back(checkpoint_detail::block_json(b));
    for (const auto& b : model.gen_blocks) gen_topo.push_back(checkpoint_detail::block_json(b));
    header["topology"] = {{"und", und_topo}, {"gen", gen_topo}};

    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : params) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.numel());
    }
    header["tensors"] = tensors;
    header["payload_elements"] = offset;

    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint to " + path);
    out.write(checkpoint_detail::kMagic, 4);
    const std::uint32_t version = checkpoint_detail::kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : params)
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!out) throw InputError("short write while saving " + path);
}

template <typename T>
UnifiedToyModel<T> load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, checkpoint_detail::kMagic, 4) != 0)
        throw FormatError(path + " is not a model checkpoint");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != checkpoint_detail::kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw FormatError("truncated checkpoint header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (header.at("dtype").get<std::string>() != checkpoint_detail::dtype_name<T>())
        throw FormatError("checkpoint holds " + header.at("dtype").get<std::string>() +
                          " weights, not " + checkpoint_detail::dtype_name<T>());

    // read the payload and check its size against the header before building
    const std::uint64_t expect = header.at("payload_elements").get<std::uint64_t>();
    std::vector<T> payload(expect);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(expect * sizeof(T)));
    if (static_cast<std::uint64_t>(in.gcount()) != expect * sizeof(T))
        throw FormatError("truncated checkpoint payload in " + path);
    in.peek();
    if (!in.eof()) throw FormatError("trailing bytes after checkpoint payload in " + path);

    std::map<std::string, Tensor<T>> by_name;
    for (const auto& tj : header.at("tensors")) {
        const std::string name = tj.at("name").get<std::string>();
        const std::vector<int> shape = tj.at("shape").get<std::vector<int>>();
        const std::uint64_t off = tj.at("offset").get<std::uint64_t>();
        Tensor<T> t(shape);
        if (off + static_cast<std::uint64_t>(t.numel()) > expect)
            throw FormatError("tensor '" + name + "' extends past the payload");
        std::copy(payload.begin() + static_cast<long>(off),
                  payload.begin() + static_cast<long>(off) + t.numel(), t.data().begin());
        by_name.emplace(name, t);
    }
    auto take = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
        return it->second;
    };

    UnifiedToyModel<T> model;
    model.cfg = checkpoint_detail::config_from_json(header.at("config"));
    model.history = header.value("history", std::vector<std::string>{});
    model.tok_embedding = take("und.tok_emb");
    model.pos_und = take("und.pos");
    model.und_final_gain = take("und.final_norm");
    model.vocab_head = take("und.head");
    model.gen_in_proj = take("gen.in_proj");
    model.pos_gen = take("gen.pos");
    model.time_w0 = take("gen.time_w0");
    model.time_w1 = take("gen.time_w1");
    model.gen_final_gain = take("gen.final_norm");
    model.gen_out_proj = take("gen.out_proj");

    auto build_blocks = [&](const nlohmann::json& topo, const std::string& prefix,
                            std::vector<Block<T>>& blocks) {
        for (size_t l = 0; l < topo.size(); ++l) {
            const auto& bj = topo[l];
            const std::string p = prefix + ".b" + std::to_string(l) + ".";
            Block<T> b;
            b.norm_attn_gain = take(p + "norm_attn");
            b.norm_mlp_gain = take(p + "norm_mlp");
            if (bj.at("has_attn").get<bool>()) {
                Attention<T> a;
                a.n_heads = bj.at("n_heads").get<int>();
                a.head_dim = bj.at("head_dim").get<int>();
                a.w_q = take(p + "attn.wq");
                a.w_k = take(p + "attn.wk");
                a.w_v = take(p + "attn.wv");
                a.w_o = take(p + "attn.wo");
                b.self_attn = std::move(a);
            }
            if (bj.at("has_cross").get<bool>()) {
                b.norm_cross_gain = take(p + "norm_cross");
                Attention<T> a;
                a.n_heads = model.cfg.n_heads;
                a.head_dim = model.cfg.head_dim();
                a.w_q = take(p + "cross.wq");
                a.w_k = take(p + "cross.wk");
                a.w_v = take(p + "cross.wv");
                a.w_o = take(p + "cross.wo");
                b.cross_attn = std::move(a);
            } else {
                b.norm_cross_gain = Tensor<T>::full({model.cfg.d_model}, T(1));
            }
            const std::string kind = bj.at("mlp").get<std::string>();
            if (kind == "dense") {
                MlpLayer<T> mlp;
                mlp.w_gate = take(p + "mlp.w_gate");
                mlp.w_up = take(p + "mlp.w_up");
                mlp.w_down = take(p + "mlp.w_down");
                b.mlp = std::move(mlp);
            } else if (kind == "moe") {
                MoeLayer<T> moe;
                moe.part = checkpoint_detail::partition_from_json(bj.at("partition"));
                moe.top_k = bj.at("top_k").get<int>();
                moe.router_w = take(p + "moe.router_w");
                moe.router_b = take(p + "moe.router_b");
                moe.shared.neuron_ids = moe.part.shared;
                moe.shared.w_gate = take(p + "moe.shared.w_gate");
                moe.shared.w_up = take(p + "moe.shared.w_up");
                moe.shared.w_down = take(p + "moe.shared.w_down");
                for (size_t j = 0; j < moe.part.routed.size(); ++j) {
                    const std::string ep = p + "moe.expert" + std::to_string(j) + ".";
                    ExpertGroup<T> g;
                    g.neuron_ids = moe.part.routed[j];
                    g.w_gate = take(ep + "w_gate");
                    g.w_up = take(ep + "w_up");
                    g.w_down = take(ep + "w_down");
                    moe.routed.push_back(std::move(g));
                }
                b.mlp = std::move(moe);
            } else if (kind != "none") {
                throw FormatError("unknown mlp kind '" + kind + "' in checkpoint");
            }
            blocks.push_back(std::move(b));
        }
    };
    build_blocks(header.at("topology").at("und"), "und", model.und_blocks);
    build_blocks(header.at("topology").at("gen"), "gen", model.gen_blocks);
    model.set_trainable(true);
    return model;
}

}  // namespace umc
