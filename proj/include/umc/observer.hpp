#pragma once

#include <vector>

#include "umc/common.hpp"
#include "umc/tensor.hpp"

namespace umc {

// Passive hook into forward passes. Implementations only read the tensors;
// forward with an observer attached is bit-identical to forward without.
template <typename T>
struct ForwardObserver {
    virtual ~ForwardObserver() = default;

    // in/out are the sublayer input and post-residual output, [tokens x d].
    virtual void on_sublayer(Component, int /*layer*/, Granularity, const Tensor<T>& /*in*/,
                             const Tensor<T>& /*out*/) {}

    // MLP hidden activations in original neuron index order, [tokens x dm].
    virtual void on_mlp_hidden(Component, int /*layer*/, const Tensor<T>& /*h*/) {}

    // Per-head pre-projection outputs, each [tokens x head_dim].
    virtual void on_head_outputs(Component, int /*layer*/, const std::vector<Tensor<T>>& /*heads*/) {}
};

}  // namespace umc
