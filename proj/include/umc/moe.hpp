#pragma once

#include <iostream>
#include <set>
#include <vector>

#include "umc/importance.hpp"
#include "umc/model.hpp"
#include "umc/moe_layer.hpp"

namespace umc {

// Shared expert first (highest cumulative importance), then the remaining
// neurons sorted descending and dealt to routed experts in alternating
// forward and reverse order, balancing total importance per expert.
inline ExpertPartition partition_experts(const ImportanceReport& report, int n_experts) {
    const int dm = static_cast<int>(report.neuron_scores.size());
    require(n_experts >= 2, "need at least two experts");
    if (dm % n_experts != 0)
        throw ConfigError("hidden width " + std::to_string(dm) + " not divisible by " +
                          std::to_string(n_experts) + " experts");
    if (n_experts != 16 && n_experts != 32 && n_experts != 64)
        std::cerr << "warning: expert count " << n_experts << " outside the studied {16,32,64}\n";

    ExpertPartition part;
    part.comp = report.comp;
    part.layer = report.layer;
    part.n_experts = n_experts;
    part.n_shared = std::max(1, n_experts / 16);
    part.expert_size = dm / n_experts;
    part.source_report = report.provenance;

    const std::vector<int> order = top_k_indices(report.neuron_scores, dm);  // full ranking
    const int n_shared_neurons = part.n_shared * part.expert_size;
    part.shared.assign(order.begin(), order.begin() + n_shared_neurons);

    const int n_routed = part.n_routed();
    part.routed.assign(static_cast<size_t>(n_routed), {});
    int pos = n_shared_neurons;
    for (int round = 0; round < part.expert_size; ++round) {
        if (round % 2 == 0)
            for (int e = 0; e < n_routed; ++e) part.routed[static_cast<size_t>(e)].push_back(order[static_cast<size_t>(pos++)]);
        else
            for (int e = n_routed - 1; e >= 0; --e) part.routed[static_cast<size_t>(e)].push_back(order[static_cast<size_t>(pos++)]);
    }
    part.validate();
    return part;
}

struct MoeConfig {
    int n_experts = 16;
    int top_k = -1;  // derived from activation_ratio when negative
    double activation_ratio = 0.5;
    bool exclude_first_last = true;
    std::vector<Component> components{Component::Generation};

    int n_shared() const { return std::max(1, n_experts / 16); }
    int derived_top_k() const {
        if (top_k > 0) return top_k;
        const int active = static_cast<int>(activation_ratio * n_experts + 0.5);
        const int k = active - n_shared();
        require(k >= 1, "activation ratio leaves no routed expert active");
        return k;
    }
};

namespace detail {

template <typename T>
ExpertGroup<T> slice_group(const MlpLayer<T>& mlp, const std::vector<int>& ids) {
    const int d = mlp.w_down.rows();
    const int sz = static_cast<int>(ids.size());
    ExpertGroup<T> g;
    g.neuron_ids = ids;
    g.w_gate = Tensor<T>({sz, mlp.w_gate.cols()});
    g.w_up = Tensor<T>({sz, mlp.w_up.cols()});
    g.w_down = Tensor<T>({d, sz});
    for (int r = 0; r < sz; ++r) {
        for (int c = 0; c < mlp.w_gate.cols(); ++c) {
            g.w_gate.at(r, c) = mlp.w_gate.at(ids[static_cast<size_t>(r)], c);
            g.w_up.at(r, c) = mlp.w_up.at(ids[static_cast<size_t>(r)], c);
        }
        for (int rr = 0; rr < d; ++rr) g.w_down.at(rr, r) = mlp.w_down.at(rr, ids[static_cast<size_t>(r)]);
    }
    return g;
}

}  // namespace detail

template <typename T>
MoeLayer<T> make_moe_layer(const MlpLayer<T>& mlp, const ExpertPartition& part, int top_k) {
    require(mlp.hidden() == part.width(), "partition width does not match the MLP");
    MoeLayer<T> layer;
    layer.part = part;
    layer.shared = detail::slice_group(mlp, part.shared);
    for (const auto& ids : part.routed) layer.routed.push_back(detail::slice_group(mlp, ids));
    const int d = mlp.w_gate.cols();
    layer.router_w = Tensor<T>::zeros({part.n_routed(), d}, true);
    layer.router_b = Tensor<T>::zeros({part.n_routed()}, true);
    layer.top_k = top_k;
    return layer;
}

// Concatenating every expert slice back into original index order must
// reproduce the dense layer bit-identically.
template <typename T>
MlpLayer<T> to_dense(const MoeLayer<T>& layer) {
    const int dm = layer.width();
    const int d = layer.shared.w_down.rows();
    const int din = layer.shared.w_gate.cols();
    MlpLayer<T> mlp;
    mlp.w_gate = Tensor<T>({dm, din});
    mlp.w_up = Tensor<T>({dm, din});
    mlp.w_down = Tensor<T>({d, dm});
    auto scatter = [&](const ExpertGroup<T>& g) {
        for (size_t r = 0; r < g.neuron_ids.size(); ++r) {
            const int id = g.neuron_ids[r];
            for (int c = 0; c < din; ++c) {
                mlp.w_gate.at(id, c) = g.w_gate.at(static_cast<int>(r), c);
                mlp.w_up.at(id, c) = g.w_up.at(static_cast<int>(r), c);
            }
            for (int rr = 0; rr < d; ++rr) mlp.w_down.at(rr, id) = g.w_down.at(rr, static_cast<int>(r));
        }
    };
    scatter(layer.shared);
    for (const auto& g : layer.routed) scatter(g);
    return mlp;
}

// Replaces each covered dense MLP with an MoE layer; first and last layers of
// a component stay dense by default.
template <typename T>
void convert(UnifiedToyModel<T>& model, const std::vector<ExpertPartition>& partitions,
             const MoeConfig& cfg) {
    const int k = cfg.derived_top_k();
    std::map<std::pair<int, int>, const ExpertPartition*> by_layer;
    for (const auto& p : partitions) {
        p.validate();
        by_layer[{static_cast<int>(p.comp), p.layer}] = &p;
    }
    for (Component comp : cfg.components) {
        auto& blocks = model.blocks(comp);
        const int n = static_cast<int>(blocks.size());
        for (int l = 0; l < n; ++l) {
            const bool excluded = cfg.exclude_first_last && (l == 0 || l == n - 1);
            auto it = by_layer.find({static_cast<int>(comp), l});
            if (excluded) continue;
            if (!std::holds_alternative<MlpLayer<T>>(blocks[static_cast<size_t>(l)].mlp)) continue;
            if (it == by_layer.end())
                throw ContractError(std::string("no partition covers ") + component_name(comp) +
                                    " layer " + std::to_string(l));
            auto& mlp = std::get<MlpLayer<T>>(blocks[static_cast<size_t>(l)].mlp);
            MoeLayer<T> moe = make_moe_layer(mlp, *it->second, k);
            moe.router_w.set_requires_grad(true);
            moe.router_b.set_requires_grad(true);
            blocks[static_cast<size_t>(l)].mlp = std::move(moe);
        }
    }
    model.set_trainable(true);
}

// Per-expert total importance; used to check snake balance.
inline std::vector<double> expert_importance_sums(const ExpertPartition& part,
                                                  const std::vector<double>& scores) {
    std::vector<double> sums;
    for (const auto& ids : part.routed) {
        double s = 0.0;
        for (int i : ids) s += scores[static_cast<size_t>(i)];
        sums.push_back(s);
    }
    return sums;
}

}  // namespace umc
