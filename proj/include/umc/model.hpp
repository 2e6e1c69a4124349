#pragma once

#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "umc/moe_layer.hpp"
#include "umc/observer.hpp"
#include "umc/ops.hpp"

namespace umc {

struct ModelConfig {
    int vocab_size = 64;
    int d_model = 32;
    int mlp_expansion = 4;
    int n_layers_und = 8;
    int n_layers_gen = 8;
    int n_heads = 4;
    int gen_output_dim = 16;
    int gen_seq_len = 8;
    int gen_steps = 8;  // Euler steps K
    int max_seq_len = 48;
    std::uint64_t seed = 0;

    int mlp_hidden() const { return d_model * mlp_expansion; }
    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
        if (vocab_size < 2 || d_model < 2 || mlp_expansion < 2 || n_layers_und < 2 ||
            n_layers_gen < 2 || n_heads < 2 || gen_output_dim < 2 || gen_steps < 1 ||
            gen_seq_len < 2)
            throw ConfigError("model dimensions below minimum");
    }
};

// Which task a forward pass is serving. Converted understanding-layer MoE
// runs dense-equivalent for understanding outputs and sparse when producing
// generation conditioning.
enum class ServeTask { Understanding, Generation };

template <typename T>
struct MlpLayer {
    Tensor<T> w_gate, w_up;  // [dm x d]
    Tensor<T> w_down;        // [d x dm]

    int hidden() const { return w_gate.rows(); }

    MlpLayer clone() const { return {w_gate.clone(), w_up.clone(), w_down.clone()}; }

    Tensor<T> forward(const Tensor<T>& x, Component comp, int layer,
                      ForwardObserver<T>* obs) const {
        Tensor<T> h = mul(silu(matmul_nt(x, w_gate)), matmul_nt(x, w_up));
        if (obs) obs->on_mlp_hidden(comp, layer, h);
        return matmul_nt(h, w_down);
    }
};

template <typename T>
struct Attention {
    Tensor<T> w_q, w_k, w_v;  // [heads*head_dim x d]
    Tensor<T> w_o;            // [d x heads*head_dim]
    int n_heads = 0;
    int head_dim = 0;

    Attention clone() const {
        return {w_q.clone(), w_k.clone(), w_v.clone(), w_o.clone(), n_heads, head_dim};
    }

    Tensor<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv_in, bool causal, Component comp,
                      int layer, ForwardObserver<T>* obs) const {
        Tensor<T> q = matmul_nt(q_in, w_q);
        Tensor<T> k = matmul_nt(kv_in, w_k);
        Tensor<T> v = matmul_nt(kv_in, w_v);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
        std::vector<Tensor<T>> heads;
        heads.reserve(static_cast<size_t>(n_heads));
        for (int h = 0; h < n_heads; ++h) {
            Tensor<T> qh = slice_cols(q, h * head_dim, head_dim);
            Tensor<T> kh = slice_cols(k, h * head_dim, head_dim);
            Tensor<T> vh = slice_cols(v, h * head_dim, head_dim);
            Tensor<T> aw = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), causal);
            heads.push_back(matmul(aw, vh));
        }
        if (obs) obs->on_head_outputs(comp, layer, heads);
        return matmul_nt(concat_cols(heads), w_o);
    }
};

template <typename T>
using MlpSlot = std::variant<std::monostate, MlpLayer<T>, MoeLayer<T>>;

template <typename T>
struct Block {
    Tensor<T> norm_attn_gain, norm_mlp_gain, norm_cross_gain;
    std::optional<Attention<T>> self_attn;
    std::optional<Attention<T>> cross_attn;  // generation blocks only
    MlpSlot<T> mlp;

    bool has_mlp() const { return !std::holds_alternative<std::monostate>(mlp); }
    bool is_moe() const { return std::holds_alternative<MoeLayer<T>>(mlp); }

    Block clone() const {
        Block b;
        b.norm_attn_gain = norm_attn_gain.clone();
        b.norm_mlp_gain = norm_mlp_gain.clone();
        b.norm_cross_gain = norm_cross_gain.clone();
        if (self_attn) b.self_attn = self_attn->clone();
        if (cross_attn) b.cross_attn = cross_attn->clone();
        if (std::holds_alternative<MlpLayer<T>>(mlp)) b.mlp = std::get<MlpLayer<T>>(mlp).clone();
        else if (std::holds_alternative<MoeLayer<T>>(mlp)) b.mlp = std::get<MoeLayer<T>>(mlp).clone();
        return b;
    }

    Tensor<T> forward(Tensor<T> h, const Tensor<T>* features, bool causal, Component comp,
                      int layer, ForwardObserver<T>* obs, MoeMode moe_mode) const {
        const Tensor<T> block_in = h;
        if (self_attn) {
            const Tensor<T> in = h;
            h = add(h, self_attn->forward(rmsnorm(h, norm_attn_gain), rmsnorm(h, norm_attn_gain),
                                          causal, comp, layer, obs));
            if (obs) obs->on_sublayer(comp, layer, Granularity::Attn, in, h);
        }
        if (cross_attn) {
            require(features != nullptr, "cross-attention block needs conditioning features");
            h = add(h, cross_attn->forward(rmsnorm(h, norm_cross_gain), *features, false, comp,
                                           layer, nullptr));
        }
        if (has_mlp()) {
            const Tensor<T> in = h;
            Tensor<T> xin = rmsnorm(h, norm_mlp_gain);
            Tensor<T> m = std::holds_alternative<MlpLayer<T>>(mlp)
                              ? std::get<MlpLayer<T>>(mlp).forward(xin, comp, layer, obs)
                              : std::get<MoeLayer<T>>(mlp).forward(xin, moe_mode, comp, layer, obs);
            h = add(h, m);
            if (obs) obs->on_sublayer(comp, layer, Granularity::Mlp, in, h);
        }
        if (obs) obs->on_sublayer(comp, layer, Granularity::Block, block_in, h);
        return h;
    }
};

template <typename T>
struct UndOutput {
    Tensor<T> logits;    // [T x V]
    Tensor<T> features;  // [T x d]
};

// The toy unified model: a causal understanding stack whose final hidden
// states condition a flow-matching generation stack via cross-attention.
template <typename T>
class UnifiedToyModel {
public:
    ModelConfig cfg;

    Tensor<T> tok_embedding;  // [V x d]
    Tensor<T> pos_und;        // [max_seq_len x d]
    std::vector<Block<T>> und_blocks;
    Tensor<T> und_final_gain;  // [d]
    Tensor<T> vocab_head;      // [V x d]

    Tensor<T> gen_in_proj;  // [d x gen_output_dim]
    Tensor<T> pos_gen;      // [gen_seq_len x d]
    Tensor<T> time_w0, time_w1;  // [d]
    std::vector<Block<T>> gen_blocks;
    Tensor<T> gen_final_gain;  // [d]
    Tensor<T> gen_out_proj;    // [gen_output_dim x d], zero init

    std::vector<std::string> history;  // completed pipeline stages, in order

    UnifiedToyModel() = default;

    explicit UnifiedToyModel(const ModelConfig& config) : cfg(config) {
        cfg.validate();
        Rng rng(cfg.seed);
        const int d = cfg.d_model;
        const double ws = 1.0 / std::sqrt(static_cast<double>(d));
        tok_embedding = Tensor<T>::randn({cfg.vocab_size, d}, rng, 0.02);
        pos_und = Tensor<T>::randn({cfg.max_seq_len, d}, rng, 0.02);
        und_final_gain = Tensor<T>::full({d}, T(1));
        vocab_head = Tensor<T>::randn({cfg.vocab_size, d}, rng, ws);
        gen_in_proj = Tensor<T>::randn({d, cfg.gen_output_dim}, rng,
                                       1.0 / std::sqrt(static_cast<double>(cfg.gen_output_dim)));
        pos_gen = Tensor<T>::randn({cfg.gen_seq_len, d}, rng, 0.02);
        time_w0 = Tensor<T>::randn({d}, rng, 0.02);
        time_w1 = Tensor<T>::randn({d}, rng, 0.02);
        gen_final_gain = Tensor<T>::full({d}, T(1));
        gen_out_proj = Tensor<T>::zeros({cfg.gen_output_dim, d});
        for (int l = 0; l < cfg.n_layers_und; ++l) und_blocks.push_back(make_block(rng, false));
        for (int l = 0; l < cfg.n_layers_gen; ++l) gen_blocks.push_back(make_block(rng, true));
        set_trainable(true);
    }

    UndOutput<T> forward_und(const std::vector<int>& tokens, ForwardObserver<T>* obs = nullptr,
                             ServeTask serve = ServeTask::Understanding) const {
        const int len = static_cast<int>(tokens.size());
        if (len < 1 || len > cfg.max_seq_len)
            throw InputError("sequence length " + std::to_string(len) + " outside [1, " +
                             std::to_string(cfg.max_seq_len) + "]");
        std::vector<int> pos_ids(tokens.size());
        std::iota(pos_ids.begin(), pos_ids.end(), 0);
        Tensor<T> h = add(embedding(tok_embedding, tokens), embedding(pos_und, pos_ids));
        const MoeMode mode =
            serve == ServeTask::Understanding ? MoeMode::DenseEquivalent : MoeMode::Sparse;
        for (size_t l = 0; l < und_blocks.size(); ++l)
            h = und_blocks[l].forward(h, nullptr, true, Component::Understanding,
                                      static_cast<int>(l), obs, mode);
        Tensor<T> features = rmsnorm(h, und_final_gain);
        Tensor<T> logits = matmul_nt(features, vocab_head);
        return {logits, features};
    }

    // Predicts the flow-matching velocity (target - noise) for state x_t at
    // time t, conditioned on understanding features via cross-attention.
    Tensor<T> forward_gen(const Tensor<T>& features, const Tensor<T>& x_t, double t,
                          ForwardObserver<T>* obs = nullptr) const {
        if (t < 0.0 || t > 1.0) throw InputError("timestep t must lie in [0,1]");
        if (features.ndim() != 2 || features.cols() != cfg.d_model)
            throw ShapeError("conditioning feature width " + shape_str(features.shape()) +
                             " does not match d_model " + std::to_string(cfg.d_model));
        if (x_t.ndim() != 2 || x_t.cols() != cfg.gen_output_dim || x_t.rows() != cfg.gen_seq_len)
            throw ShapeError("x_t shape " + shape_str(x_t.shape()) + " does not match config");
        std::vector<int> pos_ids(static_cast<size_t>(cfg.gen_seq_len));
        std::iota(pos_ids.begin(), pos_ids.end(), 0);
        Tensor<T> h = add(matmul_nt(x_t, gen_in_proj), embedding(pos_gen, pos_ids));
        Tensor<T> t_emb = add(time_w0, scale(time_w1, t));
        for (size_t l = 0; l < gen_blocks.size(); ++l) {
            h = add_row(h, t_emb);
            h = gen_blocks[l].forward(h, &features, false, Component::Generation,
                                      static_cast<int>(l), obs, MoeMode::Sparse);
        }
        return matmul_nt(rmsnorm(h, gen_final_gain), gen_out_proj);
    }

    // Euler integration from seeded Gaussian noise over cfg.gen_steps steps.
    Tensor<T> sample_gen(const std::vector<int>& tokens, std::uint64_t noise_seed) const {
        Tensor<T> features = forward_und(tokens, nullptr, ServeTask::Generation).features;
        Rng rng(noise_seed);
        Tensor<T> x = Tensor<T>::randn({cfg.gen_seq_len, cfg.gen_output_dim}, rng, 1.0);
        const int k = cfg.gen_steps;
        for (int step = 0; step < k; ++step) {
            const double t = static_cast<double>(step) / k;
            Tensor<T> v = forward_gen(features, x, t);
            x = add(x, scale(v, 1.0 / k));
        }
        return x;
    }

    // Stable-named handles to every parameter tensor.
    std::vector<std::pair<std::string, Tensor<T>>> parameters() const {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("und.tok_emb", tok_embedding);
        out.emplace_back("und.pos", pos_und);
        out.emplace_back("und.final_norm", und_final_gain);
        out.emplace_back("und.head", vocab_head);
        out.emplace_back("gen.in_proj", gen_in_proj);
        out.emplace_back("gen.pos", pos_gen);
        out.emplace_back("gen.time_w0", time_w0);
        out.emplace_back("gen.time_w1", time_w1);
        out.emplace_back("gen.final_norm", gen_final_gain);
        out.emplace_back("gen.out_proj", gen_out_proj);
        collect_blocks(out, und_blocks, "und");
        collect_blocks(out, gen_blocks, "gen");
        return out;
    }

    void set_trainable(bool on) const {
        for (auto& [name, t] : parameters()) t.set_requires_grad(on);
    }

    long parameter_count() const {
        long n = 0;
        for (const auto& [name, t] : parameters()) n += t.numel();
        return n;
    }

    UnifiedToyModel clone() const {
        UnifiedToyModel m;
        m.cfg = cfg;
        m.tok_embedding = tok_embedding.clone();
        m.pos_und = pos_und.clone();
        m.und_final_gain = und_final_gain.clone();
        m.vocab_head = vocab_head.clone();
        m.gen_in_proj = gen_in_proj.clone();
        m.pos_gen = pos_gen.clone();
        m.time_w0 = time_w0.clone();
        m.time_w1 = time_w1.clone();
        m.gen_final_gain = gen_final_gain.clone();
        m.gen_out_proj = gen_out_proj.clone();
        for (const auto& b : und_blocks) m.und_blocks.push_back(b.clone());
        for (const auto& b : gen_blocks) m.gen_blocks.push_back(b.clone());
        m.history = history;
        m.set_trainable(true);
        return m;
    }

    std::vector<Block<T>>& blocks(Component c) {
        return c == Component::Understanding ? und_blocks : gen_blocks;
    }
    const std::vector<Block<T>>& blocks(Component c) const {
        return c == Component::Understanding ? und_blocks : gen_blocks;
    }

private:
    Block<T> make_block(Rng& rng, bool generation) const {
        const int d = cfg.d_model;
        const int dm = cfg.mlp_hidden();
        const double ws = 1.0 / std::sqrt(static_cast<double>(d));
        const double wm = 1.0 / std::sqrt(static_cast<double>(dm));
        Block<T> b;
        b.norm_attn_gain = Tensor<T>::full({d}, T(1));
        b.norm_mlp_gain = Tensor<T>::full({d}, T(1));
        b.norm_cross_gain = Tensor<T>::full({d}, T(1));
        b.self_attn = make_attention(rng, ws);
        if (generation) b.cross_attn = make_attention(rng, ws);
        MlpLayer<T> mlp;
        mlp.w_gate = Tensor<T>::randn({dm, d}, rng, ws);
        mlp.w_up = Tensor<T>::randn({dm, d}, rng, ws);
        mlp.w_down = Tensor<T>::randn({d, dm}, rng, wm);
        b.mlp = std::move(mlp);
        return b;
    }

    Attention<T> make_attention(Rng& rng, double ws) const {
        Attention<T> a;
        const int d = cfg.d_model;
        a.n_heads = cfg.n_heads;
        a.head_dim = cfg.head_dim();
        a.w_q = Tensor<T>::randn({d, d}, rng, ws);
        a.w_k = Tensor<T>::randn({d, d}, rng, ws);
        a.w_v = Tensor<T>::randn({d, d}, rng, ws);
        a.w_o = Tensor<T>::randn({d, d}, rng, ws);
        return a;
    }

    static void collect_blocks(std::vector<std::pair<std::string, Tensor<T>>>& out,
                               const std::vector<Block<T>>& blocks, const std::string& prefix) {
        for (size_t l = 0; l < blocks.size(); ++l) {
            const Block<T>& b = blocks[l];
            const std::string p = prefix + ".b" + std::to_string(l) + ".";
            out.emplace_back(p + "norm_attn", b.norm_attn_gain);
            out.emplace_back(p + "norm_mlp", b.norm_mlp_gain);
            if (b.self_attn) {
                out.emplace_back(p + "attn.wq", b.self_attn->w_q);
                out.emplace_back(p + "attn.wk", b.self_attn->w_k);
                out.emplace_back(p + "attn.wv", b.self_attn->w_v);
                out.emplace_back(p + "attn.wo", b.self_attn->w_o);
            }
            if (b.cross_attn) {
                out.emplace_back(p + "norm_cross", b.norm_cross_gain);
                out.emplace_back(p + "cross.wq", b.cross_attn->w_q);
                out.emplace_back(p + "cross.wk", b.cross_attn->w_k);
                out.emplace_back(p + "cross.wv", b.cross_attn->w_v);
                out.emplace_back(p + "cross.wo", b.cross_attn->w_o);
            }
            if (std::holds_alternative<MlpLayer<T>>(b.mlp)) {
                const auto& m = std::get<MlpLayer<T>>(b.mlp);
                out.emplace_back(p + "mlp.w_gate", m.w_gate);
                out.emplace_back(p + "mlp.w_up", m.w_up);
                out.emplace_back(p + "mlp.w_down", m.w_down);
            } else if (std::holds_alternative<MoeLayer<T>>(b.mlp)) {
                const auto& m = std::get<MoeLayer<T>>(b.mlp);
                out.emplace_back(p + "moe.router_w", m.router_w);
                out.emplace_back(p + "moe.router_b", m.router_b);
                out.emplace_back(p + "moe.shared.w_gate", m.shared.w_gate);
                out.emplace_back(p + "moe.shared.w_up", m.shared.w_up);
                out.emplace_back(p + "moe.shared.w_down", m.shared.w_down);
                for (size_t j = 0; j < m.routed.size(); ++j) {
                    const std::string ep = p + "moe.expert" + std::to_string(j) + ".";
                    out.emplace_back(ep + "w_gate", m.routed[j].w_gate);
                    out.emplace_back(ep + "w_up", m.routed[j].w_up);
                    out.emplace_back(ep + "w_down", m.routed[j].w_down);
                }
            }
        }
    }
};

// Expert weight slices are exactly the tensors whose names carry a ".moe."
// group prefix other than the router.
inline bool is_expert_param(const std::string& name) {
    return name.find(".moe.shared.") != std::string::npos ||
           name.find(".moe.expert") != std::string::npos;
}

}  // namespace umc
