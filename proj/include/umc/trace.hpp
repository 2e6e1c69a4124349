#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "umc/data.hpp"
#include "umc/model.hpp"
#include "umc/observer.hpp"

namespace umc {

struct TraceOptions {
    double top_p = 0.5;  // membership threshold for dynamics bitsets
    bool per_token = true;  // expectation over tokens; false averages per sequence first
};

// Streaming activation statistics: O(parameters) memory regardless of how
// many calibration tokens pass through. All accumulators are double so merge
// order does not matter beyond rounding.
struct ActivationTrace {
    struct CosStat {
        double sum = 0.0;
        long count = 0;
    };
    struct NeuronStat {
        std::vector<double> abs_sum;
        long tokens = 0;
    };
    struct HeadStat {
        std::vector<double> norm_sum;
        long tokens = 0;
    };
    struct DynStat {
        std::vector<long> top_count;
        long observations = 0;
    };

    using LayerKey = std::pair<int, int>;                // (component, layer)
    using CosKey = std::tuple<int, int, int>;            // (component, layer, granularity)

    std::map<CosKey, CosStat> cos;
    std::map<LayerKey, NeuronStat> neurons;
    std::map<LayerKey, HeadStat> heads;
    std::map<LayerKey, DynStat> dynamics;

    TraceOptions options;
    std::string batch_id;
    std::string task;
    long n_samples = 0;

    bool empty() const { return n_samples == 0; }

    void merge_from(const ActivationTrace& o) {
        require(options.top_p == o.options.top_p && options.per_token == o.options.per_token,
                "trace merge with mismatched options");
        require(task == o.task || task.empty() || o.task.empty(),
                "trace merge with mismatched task tags");
        auto same_len = [](size_t a, size_t b) {
            require(a == b, "trace merge with mismatched topology");
        };
        for (const auto& [k, v] : o.cos) {
            auto& dst = cos[k];
            dst.sum += v.sum;
            dst.count += v.count;
        }
        for (const auto& [k, v] : o.neurons) {
            auto& dst = neurons[k];
            if (dst.abs_sum.empty()) dst.abs_sum.assign(v.abs_sum.size(), 0.0);
            same_len(dst.abs_sum.size(), v.abs_sum.size());
            for (size_t i = 0; i < v.abs_sum.size(); ++i) dst.abs_sum[i] += v.abs_sum[i];
            dst.tokens += v.tokens;
        }
        for (const auto& [k, v] : o.heads) {
            auto& dst = heads[k];
            if (dst.norm_sum.empty()) dst.norm_sum.assign(v.norm_sum.size(), 0.0);
            same_len(dst.norm_sum.size(), v.norm_sum.size());
            for (size_t i = 0; i < v.norm_sum.size(); ++i) dst.norm_sum[i] += v.norm_sum[i];
            dst.tokens += v.tokens;
        }
        for (const auto& [k, v] : o.dynamics) {
            auto& dst = dynamics[k];
            if (dst.top_count.empty()) dst.top_count.assign(v.top_count.size(), 0);
            same_len(dst.top_count.size(), v.top_count.size());
            for (size_t i = 0; i < v.top_count.size(); ++i) dst.top_count[i] += v.top_count[i];
            dst.observations += v.observations;
        }
        n_samples += o.n_samples;
        if (!o.batch_id.empty())
            batch_id = batch_id.empty() ? o.batch_id : batch_id + "+" + o.batch_id;
        if (task.empty()) task = o.task;
    }
};

inline ActivationTrace merge(const ActivationTrace& a, const ActivationTrace& b) {
    ActivationTrace out = a;
    out.merge_from(b);
    return out;
}

namespace detail {

// Accumulates one forward pass at a time; end_observation() folds the
// per-pass activation profile into the dynamics counters.
template <typename T>
class TraceRecorder : public ForwardObserver<T> {
public:
    TraceRecorder(ActivationTrace& trace, TraceOptions opts) : trace_(trace), opts_(opts) {}

    void on_sublayer(Component c, int layer, Granularity g, const Tensor<T>& in,
                     const Tensor<T>& out) override {
        auto& stat = trace_.cos[{static_cast<int>(c), layer, static_cast<int>(g)}];
        const int tokens = in.rows(), d = in.cols();
        if (opts_.per_token) {
            for (int t = 0; t < tokens; ++t) {
                stat.sum += row_cosine(in, out, t, d);
                stat.count += 1;
            }
        } else {
            double s = 0.0;
            for (int t = 0; t < tokens; ++t) s += row_cosine(in, out, t, d);
            stat.sum += s / tokens;
            stat.count += 1;
        }
    }

    void on_mlp_hidden(Component c, int layer, const Tensor<T>& h) override {
        const int tokens = h.rows(), dm = h.cols();
        auto& stat = trace_.neurons[{static_cast<int>(c), layer}];
        if (stat.abs_sum.empty()) stat.abs_sum.assign(static_cast<size_t>(dm), 0.0);
        require(stat.abs_sum.size() == static_cast<size_t>(dm), "hidden width changed mid-trace");
        auto& obs = obs_abs_[{static_cast<int>(c), layer}];
        if (obs.empty()) obs.assign(static_cast<size_t>(dm), 0.0);
        for (int t = 0; t < tokens; ++t)
            for (int i = 0; i < dm; ++i) {
                const double a = std::abs(static_cast<double>(h.at(t, i)));
                stat.abs_sum[static_cast<size_t>(i)] += a;
                obs[static_cast<size_t>(i)] += a;
            }
        stat.tokens += tokens;
    }

    void on_head_outputs(Component c, int layer, const std::vector<Tensor<T>>& per_head) override {
        auto& stat = trace_.heads[{static_cast<int>(c), layer}];
        if (stat.norm_sum.empty()) stat.norm_sum.assign(per_head.size(), 0.0);
        require(stat.norm_sum.size() == per_head.size(), "head count changed mid-trace");
        for (size_t hIdx = 0; hIdx < per_head.size(); ++hIdx) {
            const auto& a = per_head[hIdx];
            for (int t = 0; t < a.rows(); ++t) {
                double ss = 0.0;
                for (int j = 0; j < a.cols(); ++j)
                    ss += static_cast<double>(a.at(t, j)) * static_cast<double>(a.at(t, j));
                stat.norm_sum[hIdx] += std::sqrt(ss);
            }
        }
        if (!per_head.empty()) stat.tokens += per_head.front().rows();
    }

    // One observation = one (sample) or (sample, timestep) forward pass.
    void end_observation() {
        for (auto& [key, obs] : obs_abs_) {
            auto& dyn = trace_.dynamics[key];
            if (dyn.top_count.empty()) dyn.top_count.assign(obs.size(), 0);
            const int k = static_cast<int>(opts_.top_p * static_cast<double>(obs.size()));
            std::vector<int> order(obs.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            std::stable_sort(order.begin(), order.end(),
                             [&](int p, int q) { return obs[static_cast<size_t>(p)] > obs[static_cast<size_t>(q)]; });
            for (int r = 0; r < k; ++r) ++dyn.top_count[static_cast<size_t>(order[static_cast<size_t>(r)])];
            dyn.observations += 1;
        }
        obs_abs_.clear();
    }

private:
    static double row_cosine(const Tensor<T>& a, const Tensor<T>& b, int row, int d) {
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int j = 0; j < d; ++j) {
            const double x = static_cast<double>(a.at(row, j));
            const double y = static_cast<double>(b.at(row, j));
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        if (na == 0.0 || nb == 0.0) return 1.0;  // zero rows: treat as unchanged
        return dot / (std::sqrt(na) * std::sqrt(nb));
    }

    ActivationTrace& trace_;
    TraceOptions opts_;
    std::map<ActivationTrace::LayerKey, std::vector<double>> obs_abs_;
};

}  // namespace detail

// One forward pass per sample (per timestep for generation); statistics
// merged into a fresh trace. Never mutates the model.
template <typename T>
ActivationTrace record(const UnifiedToyModel<T>& model, const Dataset<T>& ds,
                       const CalibrationBatch& batch, TraceOptions opts = {}) {
    if (batch.samples.empty()) throw InputError("empty calibration batch");
    ActivationTrace trace;
    trace.options = opts;
    trace.batch_id = batch.id;
    trace.task = task_name(batch.task);
    detail::TraceRecorder<T> rec(trace, opts);

    if (batch.task == Task::Understanding) {
        for (const auto& s : batch.samples) {
            model.forward_und(s.tokens, &rec, ServeTask::Understanding);
            rec.end_observation();
            trace.n_samples += 1;
        }
        return trace;
    }

    std::vector<double> grid = batch.timestep_grid;
    if (grid.empty())
        for (int k = 0; k < model.cfg.gen_steps; ++k)
            grid.push_back(static_cast<double>(k) / model.cfg.gen_steps);
    Rng noise_rng(batch.seed ^ 0x9e3779b97f4a7c15ull);
    for (const auto& s : batch.samples) {
        // understanding stack observed once per sample, on the prompt
        Tensor<T> features = model.forward_und(s.tokens, &rec, ServeTask::Generation).features;
        rec.end_observation();
        const Tensor<T>& target = ds.patterns[static_cast<size_t>(s.cls)];
        Tensor<T> noise = Tensor<T>::randn(target.shape(), noise_rng, 1.0);
        for (double t : grid) {
            Tensor<T> x_t(target.shape());
            for (long i = 0; i < x_t.numel(); ++i)
                x_t.at(i) = static_cast<T>((1.0 - t) * static_cast<double>(noise.at(i)) +
                                           t * static_cast<double>(target.at(i)));
            model.forward_gen(features, x_t, t, &rec);
            rec.end_observation();
        }
        trace.n_samples += 1;
    }
    return trace;
}

}  // namespace umc
