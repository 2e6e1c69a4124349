#pragma once

#include <string>
#include <vector>

#include "umc/model.hpp"
#include "umc/trace.hpp"

namespace umc {

struct LayerScore {
    Component comp = Component::Understanding;
    int layer = 0;
    Granularity granularity = Granularity::Block;
    double score = 0.0;  // mean input/output cosine, in [-1, 1]
};

struct ImportanceReport {
    Component comp = Component::Understanding;
    int layer = 0;
    std::vector<double> neuron_scores;  // length dm, non-negative
    std::vector<double> head_scores;    // optional, empty when not recorded
    std::string provenance;             // calibration batch id
    std::string task;
};

// Mean residual-stream cosine per (sub)layer; higher = more redundant.
inline std::vector<LayerScore> layer_scores(const ActivationTrace& trace, Granularity g) {
    std::vector<LayerScore> out;
    for (const auto& [key, stat] : trace.cos) {
        const auto& [comp, layer, gran] = key;
        if (gran != static_cast<int>(g)) continue;
        require(stat.count > 0, "empty cosine statistic");
        out.push_back({static_cast<Component>(comp), layer, g, stat.sum / stat.count});
    }
    if (out.empty())
        throw ContractError(std::string("trace holds no statistics at granularity ") +
                            granularity_name(g));
    return out;
}

namespace detail {

template <typename T>
const MlpLayer<T>& dense_mlp_at(const UnifiedToyModel<T>& model, Component comp, int layer) {
    const auto& blocks = model.blocks(comp);
    if (layer < 0 || layer >= static_cast<int>(blocks.size()))
        throw ContractError("layer index out of range");
    const auto& slot = blocks[static_cast<size_t>(layer)].mlp;
    if (!std::holds_alternative<MlpLayer<T>>(slot))
        throw ContractError("layer has no dense MLP to score");
    return std::get<MlpLayer<T>>(slot);
}

}  // namespace detail

// s_i = mean |h_i| * ||column i of W_down||_2.
template <typename T>
ImportanceReport neuron_scores(const ActivationTrace& trace, const UnifiedToyModel<T>& model,
                               Component comp, int layer) {
    const auto it = trace.neurons.find({static_cast<int>(comp), layer});
    if (it == trace.neurons.end())
        throw ContractError("trace holds no neuron statistics for this layer");
    const auto& stat = it->second;
    const MlpLayer<T>& mlp = detail::dense_mlp_at(model, comp, layer);
    const int dm = mlp.hidden();
    if (static_cast<int>(stat.abs_sum.size()) != dm)
        throw ContractError("stale trace: layer width " + std::to_string(dm) +
                            " differs from recorded " + std::to_string(stat.abs_sum.size()));
    ImportanceReport rep;
    rep.comp = comp;
    rep.layer = layer;
    rep.provenance = trace.batch_id;
    rep.task = trace.task;
    rep.neuron_scores.resize(static_cast<size_t>(dm));
    for (int i = 0; i < dm; ++i) {
        double col_norm = 0.0;
        for (int r = 0; r < mlp.w_down.rows(); ++r) {
            const double w = static_cast<double>(mlp.w_down.at(r, i));
            col_norm += w * w;
        }
        rep.neuron_scores[static_cast<size_t>(i)] =
            (stat.abs_sum[static_cast<size_t>(i)] / stat.tokens) * std::sqrt(col_norm);
    }
    return rep;
}

// s_h = mean ||a_h||_2 * ||W_O slice for head h||_F.
template <typename T>
std::vector<double> head_scores(const ActivationTrace& trace, const UnifiedToyModel<T>& model,
                                Component comp, int layer) {
    const auto it = trace.heads.find({static_cast<int>(comp), layer});
    if (it == trace.heads.end())
        throw ContractError("trace holds no head statistics for this layer");
    const auto& stat = it->second;
    const auto& blocks = model.blocks(comp);
    require(layer >= 0 && layer < static_cast<int>(blocks.size()), "layer index out of range");
    const auto& attn = blocks[static_cast<size_t>(layer)].self_attn;
    if (!attn) throw ContractError("layer has no self-attention to score");
    if (static_cast<int>(stat.norm_sum.size()) != attn->n_heads)
        throw ContractError("stale trace: head count changed since recording");
    std::vector<double> out(stat.norm_sum.size());
    for (int h = 0; h < attn->n_heads; ++h) {
        double frob = 0.0;
        for (int r = 0; r < attn->w_o.rows(); ++r)
            for (int c = 0; c < attn->head_dim; ++c) {
                const double w = static_cast<double>(attn->w_o.at(r, h * attn->head_dim + c));
                frob += w * w;
            }
        out[static_cast<size_t>(h)] = (stat.norm_sum[static_cast<size_t>(h)] / stat.tokens) * std::sqrt(frob);
    }
    return out;
}

template <typename T>
ImportanceReport importance_report(const ActivationTrace& trace, const UnifiedToyModel<T>& model,
                                   Component comp, int layer, bool with_heads = false) {
    ImportanceReport rep = neuron_scores(trace, model, comp, layer);
    if (with_heads) rep.head_scores = head_scores(trace, model, comp, layer);
    return rep;
}

// Ranking helper used by planning, partitioning, and analysis: indices of the
// top-k scores, descending, ties broken by lower index.
inline std::vector<int> top_k_indices(const std::vector<double>& scores, int k) {
    require(k >= 0 && k <= static_cast<int>(scores.size()), "top_k out of range");
    std::vector<int> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    order.resize(static_cast<size_t>(k));
    return order;
}

}  // namespace umc
