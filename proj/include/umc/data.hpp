#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "umc/common.hpp"
#include "umc/tensor.hpp"

namespace umc {

// Synthetic task family. Understanding: cyclic pattern continuation where the
// next token is a deterministic function of the prefix from position 1 on.
// Generation: class-tagged prompts paired with a fixed per-class Gaussian
// target pattern; prompts are deliberately a different token distribution
// from the understanding sequences so task-tagged calibration differs.
struct SyntheticSpec {
    int n_classes = 8;
    int seq_len = 24;
    int period = 12;  // cycle length of the understanding pattern
    int prompt_len = 8;
    int gen_seq_len = 8;
    int gen_output_dim = 16;
    int vocab_size = 64;
    int n_train = 64;
    int n_heldout = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_classes < 1 || n_classes > vocab_size - 2)
            throw ConfigError("n_classes must lie in [1, vocab_size-2]");
        if (period < 2 || period > vocab_size - 2) throw ConfigError("period out of range");
        if (seq_len < 3 || prompt_len < 2) throw ConfigError("sequence lengths too small");
        if (n_train + n_heldout > n_classes * period)
            throw ConfigError("splits exceed the (class, offset) universe of " +
                              std::to_string(n_classes * period) + " samples");
    }
};

struct Sample {
    std::vector<int> tokens;
    int cls = 0;
    int offset = 0;
};

enum class Task { Understanding, Generation };

inline const char* task_name(Task t) { return t == Task::Understanding ? "understanding" : "generation"; }

inline Task task_from_name(const std::string& s) {
    if (s == "understanding" || s == "und") return Task::Understanding;
    if (s == "generation" || s == "gen") return Task::Generation;
    throw InputError("unknown task '" + s + "'");
}

template <typename T>
struct Dataset {
    SyntheticSpec spec;
    std::vector<std::vector<int>> class_cycle;  // per class: period distinct tokens
    std::vector<Tensor<T>> patterns;            // per class: [gen_seq_len x gen_output_dim]
    std::vector<Sample> und_train, und_heldout;
    std::vector<Sample> gen_train, gen_heldout;

    const std::vector<Sample>& train(Task t) const {
        return t == Task::Understanding ? und_train : gen_train;
    }
    const std::vector<Sample>& heldout(Task t) const {
        return t == Task::Understanding ? und_heldout : gen_heldout;
    }

    // The generating rule itself: next token given (class, position, offset).
    int next_token_und(int cls, int offset, int pos) const {
        return class_cycle[static_cast<size_t>(cls)]
                          [static_cast<size_t>((offset + pos) % spec.period)];
    }
};

struct CalibrationBatch {
    Task task = Task::Understanding;
    std::vector<Sample> samples;
    std::vector<double> timestep_grid;  // generation tasks only
    std::uint64_t seed = 0;
    std::string id;
};

namespace detail {

inline std::vector<int> und_tokens(const SyntheticSpec& spec,
                                   const std::vector<std::vector<int>>& cycles, int cls, int off) {
    std::vector<int> t(static_cast<size_t>(spec.seq_len));
    t[0] = cls;  // class marker makes the continuation rule prefix-determined
    for (int i = 1; i < spec.seq_len; ++i)
        t[static_cast<size_t>(i)] =
            cycles[static_cast<size_t>(cls)][static_cast<size_t>((off + i - 1) % spec.period)];
    return t;
}

inline std::vector<int> gen_prompt(const SyntheticSpec& spec, int cls, int off) {
    std::vector<int> t(static_cast<size_t>(spec.prompt_len));
    t[0] = spec.vocab_size - 1;  // generation marker token
    t[1] = cls;
    for (int i = 2; i < spec.prompt_len; ++i)
        t[static_cast<size_t>(i)] = ((off + i) * (cls + 2)) % (spec.vocab_size - 1);
    return t;
}

}  // namespace detail

template <typename T>
Dataset<T> gen_dataset(const SyntheticSpec& spec) {
    spec.validate();
    Dataset<T> ds;
    ds.spec = spec;
    Rng rng(spec.seed);

    // Per-class cycles: distinct tokens from [n_classes, vocab-2), so cycle
    // bodies never collide with class markers or the generation marker.
    for (int c = 0; c < spec.n_classes; ++c) {
        std::vector<int> pool;
        for (int v = spec.n_classes; v < spec.vocab_size - 1; ++v) pool.push_back(v);
        std::vector<int> cyc;
        for (int i = 0; i < spec.period; ++i) {
            const size_t pick = static_cast<size_t>(rng.index(pool.size()));
            cyc.push_back(pool[pick]);
            pool.erase(pool.begin() + static_cast<long>(pick));
        }
        ds.class_cycle.push_back(std::move(cyc));
    }

    // Target patterns, redrawn until pairwise L2 distance exceeds 1.
    for (;;) {
        ds.patterns.clear();
        for (int c = 0; c < spec.n_classes; ++c)
            ds.patterns.push_back(
                Tensor<T>::randn({spec.gen_seq_len, spec.gen_output_dim}, rng, 1.0));
        bool ok = true;
        for (size_t a = 0; a < ds.patterns.size() && ok; ++a)
            for (size_t b = a + 1; b < ds.patterns.size() && ok; ++b) {
                double d2 = 0.0;
                for (long i = 0; i < ds.patterns[a].numel(); ++i) {
                    const double dlt = static_cast<double>(ds.patterns[a].at(i)) -
                                       static_cast<double>(ds.patterns[b].at(i));
                    d2 += dlt * dlt;
                }
                if (d2 <= 1.0) ok = false;
            }
        if (ok) break;
    }

    // Shuffle the (class, offset) universe once; the front becomes training,
    // the back held-out, so the splits are disjoint by construction.
    std::vector<std::pair<int, int>> universe;
    for (int c = 0; c < spec.n_classes; ++c)
        for (int o = 0; o < spec.period; ++o) universe.emplace_back(c, o);
    for (size_t i = universe.size(); i > 1; --i)
        std::swap(universe[i - 1], universe[static_cast<size_t>(rng.index(i))]);

    for (int i = 0; i < spec.n_train + spec.n_heldout; ++i) {
        const auto [c, o] = universe[static_cast<size_t>(i)];
        Sample su{detail::und_tokens(spec, ds.class_cycle, c, o), c, o};
        Sample sg{detail::gen_prompt(spec, c, o), c, o};
        if (i < spec.n_train) {
            ds.und_train.push_back(std::move(su));
            ds.gen_train.push_back(std::move(sg));
        } else {
            ds.und_heldout.push_back(std::move(su));
            ds.gen_heldout.push_back(std::move(sg));
        }
    }
    return ds;
}

template <typename T>
CalibrationBatch make_calibration(const Dataset<T>& ds, Task task, int count, std::uint64_t seed,
                                  int timesteps = 8) {
    const auto& pool = ds.train(task);
    if (count < 1 || static_cast<size_t>(count) > pool.size())
        throw InputError("calibration count " + std::to_string(count) + " exceeds pool of " +
                         std::to_string(pool.size()));
    CalibrationBatch batch;
    batch.task = task;
    batch.seed = seed;
    batch.id = std::string(task_name(task)) + "-n" + std::to_string(count) + "-s" +
               std::to_string(seed);
    Rng rng(seed);
    std::vector<size_t> idx(pool.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<size_t>(rng.index(i))]);
    for (int i = 0; i < count; ++i) batch.samples.push_back(pool[idx[static_cast<size_t>(i)]]);
    if (task == Task::Generation)
        for (int k = 0; k < timesteps; ++k)
            batch.timestep_grid.push_back(static_cast<double>(k) / timesteps);
    return batch;
}

}  // namespace umc
