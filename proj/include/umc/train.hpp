#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "umc/data.hpp"
#include "umc/model.hpp"
#include "umc/moe.hpp"

namespace umc {

// Pipeline stages, in the order they normally run. Expert-frozen adaptation
// updates routers and backbone while the expert weight slices stay fixed;
// the full stage then unfreezes everything.
enum class Stage { Pretrain, DenseFinetune, ExpertFrozen, MoeFull };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::Pretrain: return "pretrain";
        case Stage::DenseFinetune: return "dense_finetune";
        case Stage::ExpertFrozen: return "expert_frozen";
        default: return "moe_full";
    }
}

inline Stage stage_from_name(const std::string& s) {
    if (s == "pretrain") return Stage::Pretrain;
    if (s == "dense_finetune") return Stage::DenseFinetune;
    if (s == "expert_frozen") return Stage::ExpertFrozen;
    if (s == "moe_full") return Stage::MoeFull;
    throw InputError("unknown stage '" + s + "'");
}

// Which side of the model adaptation may touch. Gen keeps the understanding
// stack fixed; UndGen adapts both, but understanding experts stay frozen
// even in the full stage (they keep serving dense understanding outputs).
enum class AdaptScope { Gen, UndGen };

struct TrainConfig {
    Stage stage = Stage::Pretrain;
    int steps = 2000;
    int batch = 8;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double w_und = 1.0;
    double w_gen = 1.0;
    std::uint64_t seed = 0;
    AdaptScope scope = AdaptScope::UndGen;
    bool force = false;      // skip the stage-ordering check
    std::string csv_path;    // loss curve destination; empty keeps it in memory
    int log_every = 50;

    void validate() const {
        if (steps < 1 || batch < 1) throw ConfigError("steps and batch must be positive");
        if (lr <= 0.0 || weight_decay < 0.0) throw ConfigError("bad optimizer settings");
        if (w_und < 0.0 || w_gen < 0.0 || w_und + w_gen == 0.0)
            throw ConfigError("task loss weights must be non-negative and not both zero");
    }
};

inline bool param_frozen(const std::string& name, const TrainConfig& cfg) {
    const bool is_und = name.rfind("und.", 0) == 0;
    switch (cfg.stage) {
        case Stage::Pretrain:
        case Stage::DenseFinetune:
            return false;
        case Stage::ExpertFrozen:
            if (cfg.scope == AdaptScope::Gen && is_und) return true;
            return is_expert_param(name);
        case Stage::MoeFull:
            if (cfg.scope == AdaptScope::Gen && is_und) return true;
            return is_und && is_expert_param(name);
    }
    return false;
}

// Decoupled-weight-decay Adam; state is keyed by parameter name so it
// survives model surgery that preserves names.
template <typename T>
class AdamW {
public:
    AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

    void step(const std::vector<std::pair<std::string, Tensor<T>>>& params,
              const TrainConfig& cfg) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (const auto& [name, p] : params) {
            if (param_frozen(name, cfg)) continue;
            const auto* g = p.grad_if();
            if (!g) continue;
            auto& st = state_[name];
            if (st.m.size() != static_cast<size_t>(p.numel())) {
                st.m.assign(static_cast<size_t>(p.numel()), 0.0);
                st.v.assign(static_cast<size_t>(p.numel()), 0.0);
            }
            for (long i = 0; i < p.numel(); ++i) {
                const double gi = static_cast<double>((*g)[static_cast<size_t>(i)]);
                auto& m = st.m[static_cast<size_t>(i)];
                auto& v = st.v[static_cast<size_t>(i)];
                m = b1_ * m + (1.0 - b1_) * gi;
                v = b2_ * v + (1.0 - b2_) * gi * gi;
                const double mh = m / bc1, vh = v / bc2;
                double x = static_cast<double>(p.at(i));
                x -= lr_ * (mh / (std::sqrt(vh) + eps_) + wd_ * x);
                p.at(i) = static_cast<T>(x);
            }
        }
    }

    long steps_taken() const { return t_; }

private:
    struct State {
        std::vector<double> m, v;
    };
    double lr_, b1_, b2_, eps_, wd_;
    long t_ = 0;
    std::map<std::string, State> state_;
};

struct LossRow {
    int step = 0;
    double total = 0.0;
    double und = 0.0;
    double gen = 0.0;
};

struct TrainResult {
    std::vector<LossRow> curve;
    double final_total = 0.0;
};

namespace detail {

template <typename T>
bool has_moe(const UnifiedToyModel<T>& model) {
    for (Component c : {Component::Understanding, Component::Generation})
        for (const auto& b : model.blocks(c))
            if (b.is_moe()) return true;
    return false;
}

}  // namespace detail

template <typename T>
TrainResult train(UnifiedToyModel<T>& model, const Dataset<T>& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage == Stage::ExpertFrozen || cfg.stage == Stage::MoeFull)
        require(detail::has_moe(model), "adaptation stage on a model without experts");
    if (cfg.stage == Stage::MoeFull && !cfg.force) {
        const bool warmed = std::find(model.history.begin(), model.history.end(),
                                      std::string("expert_frozen")) != model.history.end();
        require(warmed, "full adaptation requires an expert-frozen stage first");
    }

    model.set_trainable(true);
    AdamW<T> opt(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
    Rng rng(cfg.seed);
    TrainResult result;

    std::ofstream csv;
    if (!cfg.csv_path.empty()) {
        csv.open(cfg.csv_path);
        if (!csv) throw InputError("cannot write loss curve to " + cfg.csv_path);
        csv << "step,loss_total,loss_und,loss_gen\n";
    }

    auto params = model.parameters();
    for (int step = 0; step < cfg.steps; ++step) {
        double lu = 0.0, lg = 0.0, lt = 0.0;
        {
            GradientTape<T> tape;
            Tensor<T> loss_und = Tensor<T>::zeros({1});
            if (cfg.w_und > 0.0) {
                for (int b = 0; b < cfg.batch; ++b) {
                    const auto& s =
                        ds.und_train[static_cast<size_t>(rng.index(ds.und_train.size()))];
                    std::vector<int> prefix(s.tokens.begin(), s.tokens.end() - 1);
                    std::vector<int> targets(s.tokens.begin() + 1, s.tokens.end());
                    auto out = model.forward_und(prefix, nullptr, ServeTask::Understanding);
                    loss_und = add(loss_und, cross_entropy(out.logits, targets));
                }
                loss_und = scale(loss_und, 1.0 / cfg.batch);
            }
            Tensor<T> loss_gen = Tensor<T>::zeros({1});
            if (cfg.w_gen > 0.0) {
                for (int b = 0; b < cfg.batch; ++b) {
                    const auto& s =
                        ds.gen_train[static_cast<size_t>(rng.index(ds.gen_train.size()))];
                    auto features =
                        model.forward_und(s.tokens, nullptr, ServeTask::Generation).features;
                    const Tensor<T>& target = ds.patterns[static_cast<size_t>(s.cls)];
                    const double t = rng.uniform();
                    Tensor<T> noise = Tensor<T>::randn(target.shape(), rng, 1.0);
                    Tensor<T> x_t(target.shape());
                    Tensor<T> v_target(target.shape());
                    for (long i = 0; i < x_t.numel(); ++i) {
                        x_t.at(i) = static_cast<T>((1.0 - t) * static_cast<double>(noise.at(i)) +
                                                   t * static_cast<double>(target.at(i)));
                        v_target.at(i) = target.at(i) - noise.at(i);
                    }
                    auto v = model.forward_gen(features, x_t, t);
                    loss_gen = add(loss_gen, mse_loss(v, v_target));
                }
                loss_gen = scale(loss_gen, 1.0 / cfg.batch);
            }
            Tensor<T> total = add(scale(loss_und, cfg.w_und), scale(loss_gen, cfg.w_gen));
            lu = static_cast<double>(loss_und.at(0));
            lg = static_cast<double>(loss_gen.at(0));
            lt = static_cast<double>(total.at(0));
            if (!std::isfinite(lt))
                throw ContractError("training diverged at step " + std::to_string(step));
            tape.backward(total);
        }
        opt.step(params, cfg);
        for (auto& [name, p] : params) p.zero_grad();

        if (step % cfg.log_every == 0 || step == cfg.steps - 1) {
            result.curve.push_back({step, lt, lu, lg});
            if (csv.is_open()) csv << step << "," << lt << "," << lu << "," << lg << "\n";
        }
        result.final_total = lt;
    }
    model.history.push_back(stage_name(cfg.stage));
    return result;
}

struct EvalResult {
    double und_accuracy = 0.0;
    double und_perplexity = 0.0;
    double gen_velocity_mse = 0.0;
    double gen_fidelity = 0.0;  // nearest-pattern accuracy of sampled outputs
    long params_total = 0;
    long params_activated = 0;
    double moe_activated_fraction = 1.0;  // expert-slice parameters used per token
};

// Held-out evaluation. Next-token metrics skip position 0, where the
// continuation is not yet determined by the prefix.
template <typename T>
EvalResult evaluate(const UnifiedToyModel<T>& model, const Dataset<T>& ds,
                    std::uint64_t noise_seed = 1234) {
    EvalResult r;
    long correct = 0, counted = 0;
    double nll = 0.0;
    for (const auto& s : ds.und_heldout) {
        auto logits = model.forward_und(s.tokens, nullptr, ServeTask::Understanding).logits;
        const int len = static_cast<int>(s.tokens.size());
        for (int pos = 1; pos + 1 < len; ++pos) {
            const int target = s.tokens[static_cast<size_t>(pos + 1)];
            int best = 0;
            double mx = -std::numeric_limits<double>::infinity(), denom = 0.0;
            for (int v = 0; v < logits.cols(); ++v)
                if (static_cast<double>(logits.at(pos, v)) > mx) {
                    mx = logits.at(pos, v);
                    best = v;
                }
            for (int v = 0; v < logits.cols(); ++v)
                denom += std::exp(static_cast<double>(logits.at(pos, v)) - mx);
            nll += std::log(denom) + mx - static_cast<double>(logits.at(pos, target));
            correct += best == target;
            ++counted;
        }
    }
    if (counted > 0) {
        r.und_accuracy = static_cast<double>(correct) / counted;
        r.und_perplexity = std::exp(nll / counted);
    }

    double mse = 0.0;
    long mse_terms = 0;
    long fid_correct = 0;
    std::uint64_t sample_seed = noise_seed;
    for (const auto& s : ds.gen_heldout) {
        auto features = model.forward_und(s.tokens, nullptr, ServeTask::Generation).features;
        const Tensor<T>& target = ds.patterns[static_cast<size_t>(s.cls)];
        Rng rng(sample_seed);
        for (int k = 0; k < model.cfg.gen_steps; ++k) {
            const double t = static_cast<double>(k) / model.cfg.gen_steps;
            Tensor<T> noise = Tensor<T>::randn(target.shape(), rng, 1.0);
            Tensor<T> x_t(target.shape());
            for (long i = 0; i < x_t.numel(); ++i)
                x_t.at(i) = static_cast<T>((1.0 - t) * static_cast<double>(noise.at(i)) +
                                           t * static_cast<double>(target.at(i)));
            auto v = model.forward_gen(features, x_t, t);
            for (long i = 0; i < v.numel(); ++i) {
                const double d = static_cast<double>(v.at(i)) -
                                 (static_cast<double>(target.at(i)) - noise.at(i));
                mse += d * d;
            }
            mse_terms += v.numel();
        }

        auto sample = model.sample_gen(s.tokens, sample_seed);
        int nearest = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < ds.patterns.size(); ++c) {
            double d2 = 0.0;
            for (long i = 0; i < sample.numel(); ++i) {
                const double d = static_cast<double>(sample.at(i)) - ds.patterns[c].at(i);
                d2 += d * d;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                nearest = static_cast<int>(c);
            }
        }
        fid_correct += nearest == s.cls;
        ++sample_seed;
    }
    if (mse_terms > 0) r.gen_velocity_mse = mse / mse_terms;
    if (!ds.gen_heldout.empty())
        r.gen_fidelity = static_cast<double>(fid_correct) / ds.gen_heldout.size();

    r.params_total = model.parameter_count();
    long inactive = 0;
    long expert_total = 0, expert_active = 0;
    for (Component c : {Component::Understanding, Component::Generation})
        for (const auto& b : model.blocks(c)) {
            if (!b.is_moe()) continue;
            const auto& moe = std::get<MoeLayer<T>>(b.mlp);
            long per_expert = 0;
            for (const auto& g : moe.routed) {
                per_expert = g.w_gate.numel() + g.w_up.numel() + g.w_down.numel();
                break;
            }
            const long shared_n =
                moe.shared.w_gate.numel() + moe.shared.w_up.numel() + moe.shared.w_down.numel();
            const int skipped = moe.part.n_routed() - moe.top_k;
            inactive += static_cast<long>(skipped) * per_expert;
            expert_total += shared_n + static_cast<long>(moe.routed.size()) * per_expert;
            expert_active += shared_n + static_cast<long>(moe.top_k) * per_expert;
        }
    r.params_activated = r.params_total - inactive;
    if (expert_total > 0)
        r.moe_activated_fraction = static_cast<double>(expert_active) / expert_total;
    return r;
}

}  // namespace umc
