#pragma once

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "umc/importance.hpp"
#include "umc/model.hpp"

namespace umc {

// One removal per record; a plan is replayable on a fresh copy of the
// original model and serializes as JSON-lines.
struct PruningPlan {
    enum class Kind { Depth, Width, Heads };

    struct Record {
        Component comp;
        int layer;
        int index;  // layer index for depth, neuron index for width, head index for heads
    };

    Kind kind = Kind::Depth;
    Granularity granularity = Granularity::Block;  // depth plans only
    std::vector<Record> records;

    bool empty() const { return records.empty(); }

    static const char* kind_name(Kind k) {
        switch (k) {
            case Kind::Depth: return "depth";
            case Kind::Width: return "width";
            default: return "heads";
        }
    }

    static Kind kind_from_name(const std::string& s) {
        if (s == "depth") return Kind::Depth;
        if (s == "width") return Kind::Width;
        if (s == "heads") return Kind::Heads;
        throw InputError("unknown plan kind '" + s + "'");
    }

    std::string to_jsonl() const {
        std::ostringstream os;
        for (const auto& r : records) {
            nlohmann::json j{{"component", component_name(r.comp)},
                             {"layer", r.layer},
                             {"kind", kind_name(kind)},
                             {"index", r.index}};
            if (kind == Kind::Depth) j["granularity"] = granularity_name(granularity);
            os << j.dump() << "\n";
        }
        return os.str();
    }

    static PruningPlan from_jsonl(const std::string& text) {
        PruningPlan plan;
        std::istringstream is(text);
        std::string line;
        bool first = true;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line);
            if (first) {
                plan.kind = kind_from_name(j.at("kind").get<std::string>());
                if (j.contains("granularity"))
                    plan.granularity = granularity_from_name(j["granularity"].get<std::string>());
                first = false;
            }
            plan.records.push_back({component_from_name(j.at("component").get<std::string>()),
                                    j.at("layer").get<int>(), j.at("index").get<int>()});
        }
        return plan;
    }
};

// Selects the k most redundant (sub)layers; ties by lower layer index.
inline PruningPlan plan_depth(const std::vector<LayerScore>& scores, int k) {
    require(!scores.empty(), "plan_depth with no scores");
    const Granularity g = scores.front().granularity;
    for (const auto& s : scores) require(s.granularity == g, "mixed granularities in plan_depth");
    if (k >= static_cast<int>(scores.size()))
        throw InputError("cannot drop " + std::to_string(k) + " of " +
                         std::to_string(scores.size()) + " layers");
    PruningPlan plan;
    plan.kind = PruningPlan::Kind::Depth;
    plan.granularity = g;
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (scores[a].score != scores[b].score) return scores[a].score > scores[b].score;
        return scores[a].layer < scores[b].layer;
    });
    for (int i = 0; i < k; ++i) {
        const auto& s = scores[order[static_cast<size_t>(i)]];
        plan.records.push_back({s.comp, s.layer, s.layer});
    }
    return plan;
}

// Per-layer uniform ratio: the floor(ratio*dm) lowest-score neurons of every
// report, skipping protected layer indices.
inline PruningPlan plan_width(const std::vector<ImportanceReport>& reports, double ratio,
                              const std::set<int>& protected_layers = {}) {
    require(ratio >= 0.0 && ratio < 1.0, "width ratio must lie in [0,1)");
    PruningPlan plan;
    plan.kind = PruningPlan::Kind::Width;
    for (const auto& rep : reports) {
        if (protected_layers.count(rep.layer)) continue;
        const int dm = static_cast<int>(rep.neuron_scores.size());
        const int drop = static_cast<int>(ratio * dm);
        std::vector<int> order(static_cast<size_t>(dm));
        for (int i = 0; i < dm; ++i) order[static_cast<size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return rep.neuron_scores[static_cast<size_t>(a)] < rep.neuron_scores[static_cast<size_t>(b)];
        });
        for (int i = 0; i < drop; ++i)
            plan.records.push_back({rep.comp, rep.layer, order[static_cast<size_t>(i)]});
    }
    return plan;
}

inline PruningPlan plan_heads(const std::vector<ImportanceReport>& reports, double ratio,
                              const std::set<int>& protected_layers = {}) {
    require(ratio >= 0.0 && ratio < 1.0, "head ratio must lie in [0,1)");
    PruningPlan plan;
    plan.kind = PruningPlan::Kind::Heads;
    for (const auto& rep : reports) {
        if (protected_layers.count(rep.layer)) continue;
        require(!rep.head_scores.empty(), "report carries no head scores");
        const int nh = static_cast<int>(rep.head_scores.size());
        const int drop = static_cast<int>(ratio * nh);
        std::vector<int> order(static_cast<size_t>(nh));
        for (int i = 0; i < nh; ++i) order[static_cast<size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return rep.head_scores[static_cast<size_t>(a)] < rep.head_scores[static_cast<size_t>(b)];
        });
        for (int i = 0; i < drop; ++i)
            plan.records.push_back({rep.comp, rep.layer, order[static_cast<size_t>(i)]});
    }
    return plan;
}

namespace detail {

template <typename T>
Tensor<T> remove_rows(const Tensor<T>& t, const std::set<int>& rows) {
    const int m = t.rows(), n = t.cols();
    Tensor<T> out({m - static_cast<int>(rows.size()), n});
    int dst = 0;
    for (int i = 0; i < m; ++i) {
        if (rows.count(i)) continue;
        for (int j = 0; j < n; ++j) out.at(dst, j) = t.at(i, j);
        ++dst;
    }
    return out;
}

template <typename T>
Tensor<T> remove_cols(const Tensor<T>& t, const std::set<int>& cols) {
    const int m = t.rows(), n = t.cols();
    Tensor<T> out({m, n - static_cast<int>(cols.size())});
    for (int i = 0; i < m; ++i) {
        int dst = 0;
        for (int j = 0; j < n; ++j) {
            if (cols.count(j)) continue;
            out.at(i, dst++) = t.at(i, j);
        }
    }
    return out;
}

}  // namespace detail

// Executes a plan in place. Surviving weights are bit-identical: rows and
// columns are copied, never recomputed.
template <typename T>
void apply(UnifiedToyModel<T>& model, const PruningPlan& plan) {
    if (plan.empty()) return;

    if (plan.kind == PruningPlan::Kind::Depth) {
        // group per component, deduplicate, remove from the back
        std::map<Component, std::set<int>> targets;
        for (const auto& r : plan.records) targets[r.comp].insert(r.layer);
        for (auto& [comp, layers] : targets) {
            auto& blocks = model.blocks(comp);
            for (int l : layers)
                require(l >= 0 && l < static_cast<int>(blocks.size()),
                        "depth plan layer out of range");
            for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
                switch (plan.granularity) {
                    case Granularity::Block:
                        blocks.erase(blocks.begin() + *it);
                        break;
                    case Granularity::Mlp:
                        blocks[static_cast<size_t>(*it)].mlp = std::monostate{};
                        break;
                    case Granularity::Attn:
                        blocks[static_cast<size_t>(*it)].self_attn.reset();
                        break;
                }
            }
        }
        return;
    }

    // width and heads: gather indices per (component, layer)
    std::map<std::pair<Component, int>, std::set<int>> targets;
    for (const auto& r : plan.records) {
        auto [it, inserted] = targets[{r.comp, r.layer}].insert(r.index);
        require(inserted, "duplicate index in plan");
    }
    for (const auto& [key, indices] : targets) {
        auto& blocks = model.blocks(key.first);
        require(key.second >= 0 && key.second < static_cast<int>(blocks.size()),
                "plan layer out of range");
        Block<T>& block = blocks[static_cast<size_t>(key.second)];
        if (plan.kind == PruningPlan::Kind::Width) {
            if (!std::holds_alternative<MlpLayer<T>>(block.mlp))
                throw ContractError("width plan targets a layer without a dense MLP");
            auto& mlp = std::get<MlpLayer<T>>(block.mlp);
            const int dm = mlp.hidden();
            for (int i : indices) require(i >= 0 && i < dm, "neuron index out of range");
            require(static_cast<int>(indices.size()) < dm, "cannot remove every neuron");
            mlp.w_gate = detail::remove_rows(mlp.w_gate, indices);
            mlp.w_up = detail::remove_rows(mlp.w_up, indices);
            mlp.w_down = detail::remove_cols(mlp.w_down, indices);
        } else {
            if (!block.self_attn) throw ContractError("head plan targets a layer without attention");
            auto& attn = *block.self_attn;
            for (int h : indices) require(h >= 0 && h < attn.n_heads, "head index out of range");
            require(static_cast<int>(indices.size()) < attn.n_heads, "cannot remove every head");
            std::set<int> rows;
            for (int h : indices)
                for (int r = h * attn.head_dim; r < (h + 1) * attn.head_dim; ++r) rows.insert(r);
            attn.w_q = detail::remove_rows(attn.w_q, rows);
            attn.w_k = detail::remove_rows(attn.w_k, rows);
            attn.w_v = detail::remove_rows(attn.w_v, rows);
            attn.w_o = detail::remove_cols(attn.w_o, rows);
            attn.n_heads -= static_cast<int>(indices.size());
        }
    }
}

}  // namespace umc
