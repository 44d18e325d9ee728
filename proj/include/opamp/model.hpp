#pragma once

// Small decoder-only transformer with pluggable attention. Pre-norm
// blocks: x += Attn(LN(x)); x += FFN(LN(x)); final LN and an untied
// output head. Adapter fine-tuning freezes everything except the
// adapter (or low-rank) parameters.

#include <functional>
#include <map>
#include <string>

#include "opamp/attention.hpp"

namespace opamp {

enum class AttentionKind { Standard, OpAmp, LowRankBaseline };

inline const char* attention_kind_name(AttentionKind k) {
    switch (k) {
        case AttentionKind::Standard: return "standard";
        case AttentionKind::OpAmp: return "opamp";
        case AttentionKind::LowRankBaseline: return "lowrank-baseline";
    }
    return "?";
}

inline AttentionKind attention_kind_from_name(const std::string& s) {
    if (s == "standard") return AttentionKind::Standard;
    if (s == "opamp") return AttentionKind::OpAmp;
    if (s == "lowrank-baseline") return AttentionKind::LowRankBaseline;
    throw std::invalid_argument("unknown attention kind: " + s);
}

struct ModelConfig {
    int vocab_size = 64;
    int d = 64;
    int heads = 4;
    int layers = 2;
    int ffn_width = 256;
    int max_seq_len = 512;
    AttentionKind kind = AttentionKind::Standard;

    void validate() const {
        require(vocab_size >= 1 && d >= 1 && heads >= 1 && layers >= 1 && ffn_width >= 1 &&
                    max_seq_len >= 1,
                "all model extents must be >= 1");
        require(d % heads == 0, "d must be divisible by head count");
    }
};

template <typename S>
struct TransformerBlock {
    Tensor<S> ln1_gamma, ln1_beta;
    OpAmpAttentionLayer<S> attn;
    Tensor<S> ln2_gamma, ln2_beta;
    Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Attention matrices for every layer of one forward pass.
template <typename S>
struct ForwardTrace {
    std::vector<AttentionMatrices<S>> layers;
};

template <typename S>
struct Model {
    ModelConfig cfg;
    Tensor<S> tok_emb;   // [V x d]
    Tensor<S> prev_emb;  // [V x d], embeds the preceding token
    Tensor<S> pos_emb;   // [max_seq x d]
    std::vector<TransformerBlock<S>> blocks;
    Tensor<S> lnf_gamma, lnf_beta;
    Tensor<S> head;  // [d x V]

    // Configuration of the attached adaptation, for checkpoints.
    double cmrr = 0.0;
    int adapter_dim = 0;
    int lowrank_rank = 0;
    double lowrank_alpha = 0.0;
    bool joint_lowrank = false;

    // Enumerate every parameter with a stable name. Order is fixed; it
    // defines checkpoint layout and optimizer state order.
    void visit_params(const std::function<void(const std::string&, Tensor<S>&)>& fn) {
        fn("tok_emb", tok_emb);
        fn("prev_emb", prev_emb);
        fn("pos_emb", pos_emb);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const std::string p = "block" + std::to_string(i) + ".";
            auto& b = blocks[i];
            fn(p + "ln1.gamma", b.ln1_gamma);
            fn(p + "ln1.beta", b.ln1_beta);
            fn(p + "attn.wq", b.attn.wq);
            fn(p + "attn.wk", b.attn.wk);
            fn(p + "attn.wv", b.attn.wv);
            fn(p + "attn.wo", b.attn.wo);
            if (b.attn.adapters) {
                static const char* names[4] = {"e1q", "e2q", "e1k", "e2k"};
                for (int a = 0; a < 4; ++a) {
                    fn(p + "attn." + names[a] + ".w1", (*b.attn.adapters)[a].w1);
                    fn(p + "attn." + names[a] + ".w2", (*b.attn.adapters)[a].w2);
                }
            }
            if (b.attn.lowrank) {
                static const char* names[2] = {"lora_q", "lora_k"};
                for (int a = 0; a < 2; ++a) {
                    fn(p + "attn." + std::string(names[a]) + ".a", (*b.attn.lowrank)[a].a);
                    fn(p + "attn." + std::string(names[a]) + ".b", (*b.attn.lowrank)[a].b);
                }
            }
            fn(p + "ln2.gamma", b.ln2_gamma);
            fn(p + "ln2.beta", b.ln2_beta);
            fn(p + "ffn.w1", b.ffn_w1);
            fn(p + "ffn.b1", b.ffn_b1);
            fn(p + "ffn.w2", b.ffn_w2);
            fn(p + "ffn.b2", b.ffn_b2);
        }
        fn("lnf.gamma", lnf_gamma);
        fn("lnf.beta", lnf_beta);
        fn("head", head);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        visit_params([&](const std::string& n, Tensor<S>& t) { out.emplace_back(n, t); });
        return out;
    }

    std::vector<Tensor<S>> trainable_params() {
        std::vector<Tensor<S>> out;
        visit_params([&](const std::string&, Tensor<S>& t) {
            if (t.requires_grad()) out.push_back(t);
        });
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        visit_params([&](const std::string&, Tensor<S>& t) { n += t.size(); });
        return n;
    }

    std::size_t trainable_param_count() {
        std::size_t n = 0;
        visit_params([&](const std::string&, Tensor<S>& t) {
            if (t.requires_grad()) n += t.size();
        });
        return n;
    }

    void set_all_requires_grad(bool b) {
        visit_params([&](const std::string&, Tensor<S>& t) { t.set_requires_grad(b); });
    }

    void zero_grads() {
        visit_params([&](const std::string&, Tensor<S>& t) { t.zero_grad(); });
    }

    // Forward over one token sequence -> logits [N x V]. Captures the
    // per-layer attention matrices when a trace sink is given.
    Tensor<S> forward(const std::vector<int>& ids, ForwardTrace<S>* trace = nullptr,
                      bool causal = true) const {
        require(!ids.empty(), "forward: empty input");
        require(static_cast<int>(ids.size()) <= cfg.max_seq_len,
                "sequence length " + std::to_string(ids.size()) + " exceeds max " +
                    std::to_string(cfg.max_seq_len));
        std::vector<int> positions(ids.size());
        std::vector<int> prev_ids(ids.size(), 0);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            positions[i] = static_cast<int>(i);
            if (i > 0) prev_ids[i] = ids[i - 1];
        }
        // The previous-token term gives each position direct access to its
        // left neighbor, so attention keys can carry local bigram context
        // without spending a head on it.
        auto x = add(add(embedding(tok_emb, ids), embedding(prev_emb, prev_ids)),
                     embedding(pos_emb, positions));
        for (const auto& b : blocks) {
            auto h = layer_norm(x, b.ln1_gamma, b.ln1_beta);
            std::pair<Tensor<S>, AttentionMatrices<S>> att =
                b.attn.adapters ? opamp_attention(h, b.attn, causal)
                                : base_attention(h, b.attn, causal);
            if (trace) trace->layers.push_back(att.second);
            x = add(x, att.first);
            auto f = layer_norm(x, b.ln2_gamma, b.ln2_beta);
            auto ff = add_row_bias(
                matmul(activation(add_row_bias(matmul(f, b.ffn_w1), b.ffn_b1), Activation::Gelu),
                       b.ffn_w2),
                b.ffn_b2);
            x = add(x, ff);
        }
        x = layer_norm(x, lnf_gamma, lnf_beta);
        return matmul(x, head);
    }
};

template <typename S>
Model<S> build_base_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    Model<S> m;
    m.cfg = cfg;
    m.cfg.kind = AttentionKind::Standard;
    const S emb_bound = static_cast<S>(0.1);
    m.tok_emb = Tensor<S>::uniform({cfg.vocab_size, cfg.d}, -emb_bound, emb_bound, rng, true);
    m.prev_emb = Tensor<S>::uniform({cfg.vocab_size, cfg.d}, -emb_bound, emb_bound, rng, true);
    m.pos_emb = Tensor<S>::uniform({cfg.max_seq_len, cfg.d}, -emb_bound, emb_bound, rng, true);
    const S ffn_bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.d)));
    const S ffn2_bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(cfg.ffn_width)));
    for (int i = 0; i < cfg.layers; ++i) {
        TransformerBlock<S> b;
        b.ln1_gamma = Tensor<S>::filled({cfg.d}, S(1), true);
        b.ln1_beta = Tensor<S>::zeros({cfg.d}, true);
        b.attn = make_attention_layer<S>(cfg.d, cfg.heads, rng);
        b.ln2_gamma = Tensor<S>::filled({cfg.d}, S(1), true);
        b.ln2_beta = Tensor<S>::zeros({cfg.d}, true);
        b.ffn_w1 = Tensor<S>::uniform({cfg.d, cfg.ffn_width}, -ffn_bound, ffn_bound, rng, true);
        b.ffn_b1 = Tensor<S>::zeros({cfg.ffn_width}, true);
        b.ffn_w2 = Tensor<S>::uniform({cfg.ffn_width, cfg.d}, -ffn2_bound, ffn2_bound, rng, true);
        b.ffn_b2 = Tensor<S>::zeros({cfg.d}, true);
        m.blocks.push_back(std::move(b));
    }
    m.lnf_gamma = Tensor<S>::filled({cfg.d}, S(1), true);
    m.lnf_beta = Tensor<S>::zeros({cfg.d}, true);
    m.head = Tensor<S>::uniform({cfg.d, cfg.vocab_size}, -ffn_bound, ffn_bound, rng, true);
    return m;
}

// Closed-form parameter count for a freshly built base model.
inline std::size_t base_param_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.d, v = cfg.vocab_size, f = cfg.ffn_width;
    const std::size_t per_block = 4 * d * d    // wq wk wv wo
                                  + 4 * d      // two layer norms
                                  + d * f + f  // ffn in
                                  + f * d + d; // ffn out
    return 2 * v * d + static_cast<std::size_t>(cfg.max_seq_len) * d +
           static_cast<std::size_t>(cfg.layers) * per_block + 2 * d + d * v;
}

// Replace every attention layer's behavior with the OpAmp mechanism:
// zero-initialized adapters over the frozen base weights. Everything
// except the adapters stops receiving gradients.
template <typename S>
void attach_opamp_adapters(Model<S>& m, double k, int d2, std::uint64_t seed,
                           Activation act = Activation::Gelu) {
    require(m.cfg.kind == AttentionKind::Standard, "model already adapted");
    require(k > 0.0, "CMRR must be positive");
    require(d2 >= 1, "adapter width must be >= 1");
    m.set_all_requires_grad(false);
    std::mt19937_64 seeder(seed);
    for (auto& b : m.blocks) zero_init(b.attn, k, d2, seeder(), act);
    m.cfg.kind = AttentionKind::OpAmp;
    m.cmrr = k;
    m.adapter_dim = d2;
}

// Low-rank baseline: additive zero-initialized deltas on Wq and Wk.
template <typename S>
void attach_lowrank_baseline(Model<S>& m, int r, double alpha, std::uint64_t seed) {
    require(m.cfg.kind == AttentionKind::Standard, "model already adapted");
    require(r >= 1, "rank must be >= 1");
    m.set_all_requires_grad(false);
    std::mt19937_64 rng(seed);
    for (auto& b : m.blocks)
        b.attn.lowrank = {make_lowrank<S>(m.cfg.d, r, alpha, rng),
                          make_lowrank<S>(m.cfg.d, r, alpha, rng)};
    m.cfg.kind = AttentionKind::LowRankBaseline;
    m.lowrank_rank = r;
    m.lowrank_alpha = alpha;
}

// Optional joint mode: low-rank deltas added to an already OpAmp-adapted
// model and trained together with the adapters.
template <typename S>
void attach_joint_lowrank(Model<S>& m, int r, double alpha, std::uint64_t seed) {
    require(m.cfg.kind == AttentionKind::OpAmp, "joint low-rank requires an OpAmp model");
    require(r >= 1, "rank must be >= 1");
    std::mt19937_64 rng(seed);
    for (auto& b : m.blocks)
        b.attn.lowrank = {make_lowrank<S>(m.cfg.d, r, alpha, rng),
                          make_lowrank<S>(m.cfg.d, r, alpha, rng)};
    m.lowrank_rank = r;
    m.lowrank_alpha = alpha;
    m.joint_lowrank = true;
}

}  // namespace opamp
