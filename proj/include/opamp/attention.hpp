#pragma once

// Standard multi-head attention, residual bottleneck adapters, and the
// OpAmp attention mechanism: two adapter-formed attention branches
// combined as A_d(M+ - M-) + (A_c/2)(M+ + M-).

#include <array>
#include <optional>

#include "opamp/tensor.hpp"

namespace opamp {

// Fixed per-layer gains. Not trained; K = A_d / A_c by construction.
struct OpAmpConfig {
    double cmrr = 1.0;         // K
    double common_mode = 1.0;  // A_c
    double differential = 1.0; // A_d = K * A_c

    static OpAmpConfig from_cmrr(double k, double common_mode = 1.0) {
        require(k > 0.0, "CMRR must be positive");
        require(common_mode > 0.0, "common-mode gain must be positive");
        return {k, common_mode, k * common_mode};
    }
};

// Residual bottleneck adapter: phi(h W1) W2 + h.
template <typename S>
struct AdapterParams {
    Tensor<S> w1;  // [d1 x d2]
    Tensor<S> w2;  // [d2 x d1]
    Activation act = Activation::Gelu;

    int feature_dim() const { return w1.rows(); }
    int hidden_dim() const { return w1.cols(); }
};

template <typename S>
AdapterParams<S> make_adapter(int d1, int d2, Activation act, std::mt19937_64& rng) {
    require(d2 >= 1, "adapter hidden width must be >= 1");
    AdapterParams<S> p;
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d1)));
    p.w1 = Tensor<S>::uniform({d1, d2}, -bound, bound, rng, true);
    p.w2 = Tensor<S>::zeros({d2, d1}, true);
    p.act = act;
    return p;
}

template <typename S>
Tensor<S> adapter_forward(const Tensor<S>& h, const AdapterParams<S>& p) {
    require(h.cols() == p.feature_dim(),
            "adapter width mismatch: input " + shape_str(h.shape()) + ", W1 " +
                shape_str(p.w1.shape()));
    return add(matmul(activation(matmul(h, p.w1), p.act), p.w2), h);
}

// Low-rank additive delta x A B * (alpha/r), B zero-initialized.
template <typename S>
struct LowRankParams {
    Tensor<S> a;  // [d x r]
    Tensor<S> b;  // [r x d]
    double alpha = 16.0;

    int rank() const { return a.cols(); }
    double scaling() const { return alpha / rank(); }
};

template <typename S>
LowRankParams<S> make_lowrank(int d, int r, double alpha, std::mt19937_64& rng) {
    require(r >= 1, "low-rank adapter rank must be >= 1");
    LowRankParams<S> p;
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
    p.a = Tensor<S>::uniform({d, r}, -bound, bound, rng, true);
    p.b = Tensor<S>::zeros({r, d}, true);
    p.alpha = alpha;
    return p;
}

template <typename S>
Tensor<S> lowrank_delta(const Tensor<S>& x, const LowRankParams<S>& p) {
    return scale(matmul(matmul(x, p.a), p.b), static_cast<S>(p.scaling()));
}

// Per-head attention matrices captured during a forward pass. For a
// standard layer only `combined` is filled; for an OpAmp layer it holds
// M-bar together with the two branches.
template <typename S>
struct AttentionMatrices {
    std::vector<Tensor<S>> combined;  // M or M-bar, one [N x N] per head
    std::vector<Tensor<S>> plus;      // M+
    std::vector<Tensor<S>> minus;     // M-
};

// One attention layer over pre-trained projections. The four adapters
// (two per Q/K path) exist only for the OpAmp variant; the low-rank pair
// only for the low-rank baseline (or jointly, when configured).
template <typename S>
struct OpAmpAttentionLayer {
    Tensor<S> wq, wk, wv, wo;  // [d x d] base projections, frozen during PEFT
    int heads = 1;

    std::optional<std::array<AdapterParams<S>, 4>> adapters;  // e1q, e2q, e1k, e2k
    OpAmpConfig gains;

    std::optional<std::array<LowRankParams<S>, 2>> lowrank;  // q, k deltas

    int width() const { return wq.rows(); }
    int head_width() const { return width() / heads; }
};

template <typename S>
OpAmpAttentionLayer<S> make_attention_layer(int d, int heads, std::mt19937_64& rng) {
    require(heads >= 1 && d % heads == 0,
            "width " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
    OpAmpAttentionLayer<S> l;
    const S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
    l.wq = Tensor<S>::uniform({d, d}, -bound, bound, rng, true);
    l.wk = Tensor<S>::uniform({d, d}, -bound, bound, rng, true);
    l.wv = Tensor<S>::uniform({d, d}, -bound, bound, rng, true);
    l.wo = Tensor<S>::uniform({d, d}, -bound, bound, rng, true);
    l.heads = heads;
    return l;
}

// Attach zero-initialized adapters: all four W2 exactly zero, W1 small
// symmetric uniform, A_c = 1 and A_d = K. At this point the layer is an
// exact identity over the standard attention path.
template <typename S>
void zero_init(OpAmpAttentionLayer<S>& layer, double k, int d2, std::uint64_t seed,
               Activation act = Activation::Gelu) {
    require(k > 0.0, "CMRR must be positive");
    std::mt19937_64 rng(seed);
    const int d = layer.width();
    layer.adapters = {make_adapter<S>(d, d2, act, rng), make_adapter<S>(d, d2, act, rng),
                      make_adapter<S>(d, d2, act, rng), make_adapter<S>(d, d2, act, rng)};
    layer.gains = OpAmpConfig::from_cmrr(k, 1.0);
}

namespace detail {

// Softmax(Q_h K_h^T / sqrt(d_h)) for one head slice.
template <typename S>
Tensor<S> head_scores(const Tensor<S>& q, const Tensor<S>& k, int c0, int dh,
                      const std::vector<std::uint8_t>* mask) {
    auto qh = slice_cols(q, c0, dh);
    auto kh = slice_cols(k, c0, dh);
    auto logits = scale(matmul_nt(qh, kh), static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
    return softmax_rows(logits, mask);
}

}  // namespace detail

// Plain multi-head attention on already-projected Q, K, V. Returns the
// concatenated head outputs (no output projection) plus per-head M.
template <typename S>
std::pair<Tensor<S>, AttentionMatrices<S>> standard_attention(const Tensor<S>& q,
                                                              const Tensor<S>& k,
                                                              const Tensor<S>& v, int heads,
                                                              bool causal) {
    const int n = q.rows(), d = q.cols();
    require(k.rows() == n && v.rows() == n && k.cols() == d && v.cols() == d,
            "attention inputs must share [N x d]: " + shape_str(q.shape()) + ", " +
                shape_str(k.shape()) + ", " + shape_str(v.shape()));
    require(heads >= 1 && d % heads == 0, "d not divisible by head count");
    const int dh = d / heads;
    std::vector<std::uint8_t> mask;
    if (causal) mask = causal_mask(n);
    const auto* mp = causal ? &mask : nullptr;

    AttentionMatrices<S> trace;
    std::vector<Tensor<S>> outs;
    for (int h = 0; h < heads; ++h) {
        auto m = detail::head_scores(q, k, h * dh, dh, mp);
        trace.combined.push_back(m);
        outs.push_back(matmul(m, slice_cols(v, h * dh, dh)));
    }
    return {concat_cols(outs), trace};
}

// OpAmp attention over one layer: project, run the two adapter branches,
// combine per head, apply V and the output projection.
template <typename S>
std::pair<Tensor<S>, AttentionMatrices<S>> opamp_attention(const Tensor<S>& x,
                                                           const OpAmpAttentionLayer<S>& layer,
                                                           bool causal) {
    require(x.cols() == layer.width(), "input width " + std::to_string(x.cols()) +
                                           " != layer width " + std::to_string(layer.width()));
    require(layer.adapters.has_value(), "opamp_attention on a layer without adapters");
    const int n = x.rows();
    const int dh = layer.head_width();

    auto q = matmul(x, layer.wq);
    auto k = matmul(x, layer.wk);
    if (layer.lowrank) {
        q = add(q, lowrank_delta(x, (*layer.lowrank)[0]));
        k = add(k, lowrank_delta(x, (*layer.lowrank)[1]));
    }
    auto v = matmul(x, layer.wv);

    const auto& e = *layer.adapters;
    auto q1 = adapter_forward(q, e[0]);
    auto q2 = adapter_forward(q, e[1]);
    auto k1 = adapter_forward(k, e[2]);
    auto k2 = adapter_forward(k, e[3]);

    std::vector<std::uint8_t> mask;
    if (causal) mask = causal_mask(n);
    const auto* mp = causal ? &mask : nullptr;

    const S a_d = static_cast<S>(layer.gains.differential);
    const S a_c = static_cast<S>(layer.gains.common_mode);

    AttentionMatrices<S> trace;
    std::vector<Tensor<S>> outs;
    for (int h = 0; h < layer.heads; ++h) {
        auto m_plus = detail::head_scores(q1, k1, h * dh, dh, mp);
        auto m_minus = detail::head_scores(q2, k2, h * dh, dh, mp);
        auto m_bar = add(scale(sub(m_plus, m_minus), a_d),
                         scale(add(m_plus, m_minus), static_cast<S>(0.5) * a_c));
        trace.plus.push_back(m_plus);
        trace.minus.push_back(m_minus);
        trace.combined.push_back(m_bar);
        outs.push_back(matmul(m_bar, slice_cols(v, h * dh, dh)));
    }
    return {matmul(concat_cols(outs), layer.wo), trace};
}

// Standard path through the same layer weights (adapters ignored),
// including the low-rank deltas when present and the output projection.
template <typename S>
std::pair<Tensor<S>, AttentionMatrices<S>> base_attention(const Tensor<S>& x,
                                                          const OpAmpAttentionLayer<S>& layer,
                                                          bool causal) {
    auto q = matmul(x, layer.wq);
    auto k = matmul(x, layer.wk);
    if (layer.lowrank) {
        q = add(q, lowrank_delta(x, (*layer.lowrank)[0]));
        k = add(k, lowrank_delta(x, (*layer.lowrank)[1]));
    }
    auto v = matmul(x, layer.wv);
    auto [concat, trace] = standard_attention(q, k, v, layer.heads, causal);
    return {matmul(concat, layer.wo), trace};
}

}  // namespace opamp
