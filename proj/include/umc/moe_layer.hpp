#pragma once

#include <optional>
#include <string>
#include <vector>

#include "umc/observer.hpp"
#include "umc/ops.hpp"

namespace umc {

// Declarative split of a dense MLP's hidden neurons into one shared group and
// n_routed routed groups. Lists keep assignment order (shared: descending
// score; routed: snake order), so replaying a serialized partition is exact.
struct ExpertPartition {
    Component comp = Component::Generation;
    int layer = 0;
    int n_experts = 16;
    int n_shared = 1;
    int expert_size = 0;
    std::vector<int> shared;
    std::vector<std::vector<int>> routed;
    std::string source_report;

    int n_routed() const { return n_experts - n_shared; }
    int width() const { return n_experts * expert_size; }

    void validate() const {
        require(n_shared >= 1 && n_experts > n_shared, "expert counts out of range");
        require(static_cast<int>(shared.size()) == n_shared * expert_size,
                "shared group must hold n_shared*expert_size neurons");
        require(static_cast<int>(routed.size()) == n_routed(), "routed group count mismatch");
        std::vector<char> seen(static_cast<size_t>(width()), 0);
        auto mark_ids = [&](const std::vector<int>& ids) {
            for (int i : ids) {
                require(i >= 0 && i < width(), "neuron index out of range");
                require(!seen[static_cast<size_t>(i)], "neuron assigned twice");
                seen[static_cast<size_t>(i)] = 1;
            }
        };
        mark_ids(shared);
        for (const auto& r : routed) {
            require(static_cast<int>(r.size()) == expert_size, "routed expert size mismatch");
            mark_ids(r);
        }
        for (char c : seen) require(c, "partition does not cover all neurons");
    }
};

enum class MoeMode { Sparse, DenseEquivalent };

template <typename T>
struct ExpertGroup {
    std::vector<int> neuron_ids;
    Tensor<T> w_gate, w_up;  // [size x d]
    Tensor<T> w_down;        // [d x size]

    Tensor<T> forward(const Tensor<T>& x, Tensor<T>* hidden_out = nullptr) const {
        Tensor<T> h = mul(silu(matmul_nt(x, w_gate)), matmul_nt(x, w_up));
        if (hidden_out) *hidden_out = h;
        return matmul_nt(h, w_down);
    }

    ExpertGroup clone() const {
        return {neuron_ids, w_gate.clone(), w_up.clone(), w_down.clone()};
    }
};

// Mixture-of-experts replacement for a dense Gate-Up-Down MLP. Expert slices
// are copies of the original rows/columns; gates are reparameterized as
// 1 + Router(x) with a zero-initialized linear router, so at conversion time
// every gate is exactly 1.
template <typename T>
struct MoeLayer {
    ExpertPartition part;
    ExpertGroup<T> shared;
    std::vector<ExpertGroup<T>> routed;
    Tensor<T> router_w;  // [n_routed x d], zero init
    Tensor<T> router_b;  // [n_routed], zero init
    int top_k = 0;
    MoeMode default_mode = MoeMode::Sparse;

    int width() const { return part.width(); }

    MoeLayer clone() const {
        MoeLayer m;
        m.part = part;
        m.shared = shared.clone();
        for (const auto& r : routed) m.routed.push_back(r.clone());
        m.router_w = router_w.clone();
        m.router_b = router_b.clone();
        m.top_k = top_k;
        m.default_mode = default_mode;
        return m;
    }

    Tensor<T> forward(const Tensor<T>& x, MoeMode mode, Component comp = Component::Generation,
                      int layer = -1, ForwardObserver<T>* obs = nullptr) const {
        const int tokens = x.rows();
        const int n_routed = part.n_routed();
        require(top_k >= 1 && top_k <= n_routed, "top_k out of range");

        std::vector<Tensor<T>> hidden(static_cast<size_t>(n_routed));
        Tensor<T> shared_hidden;
        Tensor<T> out = shared.forward(x, obs ? &shared_hidden : nullptr);

        if (mode == MoeMode::DenseEquivalent) {
            // All experts, gates uniformly 1 (the dense special case).
            for (int j = 0; j < n_routed; ++j)
                out = add(out, routed[static_cast<size_t>(j)].forward(x, obs ? &hidden[static_cast<size_t>(j)] : nullptr));
            if (obs) emit_hidden(obs, comp, layer, x, shared_hidden, hidden, nullptr, nullptr);
            return out;
        }

        Tensor<T> scores = add_row(matmul_nt(x, router_w), router_b);  // [tokens x n_routed]
        // Per-token top-k on raw router scores, ties by lower expert index.
        // The selection mask is a constant; gradients reach the router only
        // through the gate multipliers.
        Tensor<T> mask({tokens, n_routed});
        for (int t = 0; t < tokens; ++t) {
            std::vector<int> order(static_cast<size_t>(n_routed));
            for (int j = 0; j < n_routed; ++j) order[static_cast<size_t>(j)] = j;
            std::stable_sort(order.begin(), order.end(), [&](int p, int q) {
                return scores.at(t, p) > scores.at(t, q);
            });
            for (int r = 0; r < top_k; ++r) mask.at(t, order[static_cast<size_t>(r)]) = T(1);
        }
        Tensor<T> gates = mul(add_const(scores, 1.0), mask);
        for (int j = 0; j < n_routed; ++j) {
            Tensor<T> fj = routed[static_cast<size_t>(j)].forward(x, obs ? &hidden[static_cast<size_t>(j)] : nullptr);
            out = add(out, row_scale(fj, slice_cols(gates, j, 1)));
        }
        if (obs) emit_hidden(obs, comp, layer, x, shared_hidden, hidden, &gates, &mask);
        return out;
    }

private:
    // Scatter per-group hiddens back into original neuron order so traces on
    // converted models line up with dense ones. Sparse mode reports the
    // effective (gated) hidden activations.
    void emit_hidden(ForwardObserver<T>* obs, Component comp, int layer, const Tensor<T>& x,
                     const Tensor<T>& shared_hidden, const std::vector<Tensor<T>>& hidden,
                     const Tensor<T>* gates, const Tensor<T>* mask) const {
        const int tokens = x.rows();
        Tensor<T> full({tokens, width()});
        for (int t = 0; t < tokens; ++t) {
            for (size_t i = 0; i < part.shared.size(); ++i)
                full.at(t, part.shared[i]) = shared_hidden.at(t, static_cast<int>(i));
            for (size_t j = 0; j < routed.size(); ++j) {
                T g = T(1);
                if (gates) g = mask->at(t, static_cast<int>(j)) != T(0) ? gates->at(t, static_cast<int>(j)) : T(0);
                for (size_t i = 0; i < routed[j].neuron_ids.size(); ++i)
                    full.at(t, routed[j].neuron_ids[i]) = hidden[j].at(t, static_cast<int>(i)) * g;
            }
        }
        obs->on_mlp_hidden(comp, layer, full);
    }
};

}  // namespace umc
