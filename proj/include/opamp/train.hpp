#pragma once

// Training loops: next-token pre-training over full sequences and
// answer-masked supervised fine-tuning, both with AdamW-style decoupled
// weight decay and linear warmup into a constant learning rate.

#include "opamp/model.hpp"
#include "opamp/task.hpp"

namespace opamp {

struct TrainingHyperparams {
    double learning_rate = 3e-3;
    double warmup_ratio = 0.03;
    int epochs = 1;
    int batch_size = 8;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    int lowrank_r = 32;
    double lowrank_alpha = 16.0;
    int adapter_dim = 16;
    bool joint_lowrank = false;

    void validate() const {
        require(learning_rate > 0.0, "learning rate must be positive");
        require(warmup_ratio >= 0.0 && warmup_ratio < 1.0, "warmup ratio must lie in [0,1)");
        require(epochs >= 0 && batch_size >= 1, "bad epoch/batch settings");
    }

    // Values reported for the full-scale setup; kept for reference and
    // config files, not sized for the desk models here.
    static TrainingHyperparams full_scale_preset() {
        TrainingHyperparams hp;
        hp.learning_rate = 2e-4;
        hp.epochs = 1;
        hp.lowrank_r = 64;
        hp.lowrank_alpha = 16.0;
        hp.adapter_dim = 512;
        return hp;
    }
};

struct TrainingLog {
    std::vector<double> losses;  // one entry per optimizer step
};

template <typename S>
class AdamW {
public:
    AdamW(std::vector<Tensor<S>> params, const TrainingHyperparams& hp)
        : params_(std::move(params)), hp_(hp) {
        for (const auto& p : params_) {
            m_.emplace_back(p.size(), 0.0);
            v_.emplace_back(p.size(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(hp_.beta1, t_);
        const double bc2 = 1.0 - std::pow(hp_.beta2, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = params_[pi];
            if (!p.has_grad()) continue;  // no gradient flowed this step
            auto& data = p.data();
            const auto& g = p.grad();
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                m_[pi][i] = hp_.beta1 * m_[pi][i] + (1.0 - hp_.beta1) * gi;
                v_[pi][i] = hp_.beta2 * v_[pi][i] + (1.0 - hp_.beta2) * gi * gi;
                const double mh = m_[pi][i] / bc1;
                const double vh = v_[pi][i] / bc2;
                double x = static_cast<double>(data[i]);
                x -= lr * (mh / (std::sqrt(vh) + hp_.eps) + hp_.weight_decay * x);
                data[i] = static_cast<S>(x);
            }
        }
    }

    void zero_grads() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor<S>> params_;
    TrainingHyperparams hp_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

inline double warmup_lr(double base, double warmup_ratio, int step, int total_steps) {
    const int warmup = static_cast<int>(std::lround(warmup_ratio * total_steps));
    if (warmup > 0 && step < warmup) return base * (step + 1) / static_cast<double>(warmup);
    return base;
}

namespace detail {

// Shift a token sequence into (targets, mask) for next-token loss.
// Row i of the logits predicts token i+1; restrict_mask, when given,
// marks which *target* positions contribute.
inline void shift_targets(const std::vector<int>& tokens,
                          const std::vector<std::uint8_t>* restrict_mask,
                          std::vector<int>& targets, std::vector<std::uint8_t>& mask) {
    const std::size_t n = tokens.size();
    targets.assign(n, 0);
    mask.assign(n, 0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        targets[i] = tokens[i + 1];
        mask[i] = restrict_mask ? (*restrict_mask)[i + 1] : std::uint8_t(1);
    }
}

template <typename S>
TrainingLog run_training(Model<S>& model, const std::vector<std::vector<int>>& sequences,
                         const std::vector<const std::vector<std::uint8_t>*>& restrict_masks,
                         const TrainingHyperparams& hp) {
    hp.validate();
    require(!sequences.empty(), "training set is empty");
    AdamW<S> opt(model.trainable_params(), hp);
    const int steps_per_epoch =
        static_cast<int>((sequences.size() + hp.batch_size - 1) / hp.batch_size);
    const int total_steps = hp.epochs * steps_per_epoch;

    TrainingLog log;
    std::vector<std::size_t> order(sequences.size());
    int step = 0;
    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 shuffle_rng(hp.seed + 0x5851f42d4c957f2dULL * (epoch + 1));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(uniform01(shuffle_rng) * i)]);

        for (std::size_t base = 0; base < order.size(); base += hp.batch_size) {
            const std::size_t end = std::min(order.size(), base + hp.batch_size);
            double step_loss = 0.0;
            model.zero_grads();
            for (std::size_t bi = base; bi < end; ++bi) {
                const auto& seq = sequences[order[bi]];
                std::vector<int> targets;
                std::vector<std::uint8_t> mask;
                shift_targets(seq, restrict_masks.empty() ? nullptr : restrict_masks[order[bi]],
                              targets, mask);
                auto logits = model.forward(seq);
                auto loss = scale(cross_entropy(logits, targets, mask),
                                  static_cast<S>(1.0 / (end - base)));
                backward(loss);
                step_loss += static_cast<double>(loss.item());
            }
            opt.step(warmup_lr(hp.learning_rate, hp.warmup_ratio, step, total_steps));
            log.losses.push_back(step_loss);
            ++step;
        }
    }
    return log;
}

}  // namespace detail

// Next-token training over every position of each corpus sequence.
template <typename S>
TrainingLog pretrain(Model<S>& model, const std::vector<std::vector<int>>& corpus,
                     const TrainingHyperparams& hp) {
    return detail::run_training(model, corpus, {}, hp);
}

// Supervised fine-tuning: loss only on answer-token positions.
template <typename S>
TrainingLog finetune(Model<S>& model, const std::vector<task::AssembledExample>& dataset,
                     const TrainingHyperparams& hp) {
    require(model.cfg.kind != AttentionKind::Standard,
            "finetune expects an adapted model; use pretrain for the base");
    std::vector<std::vector<int>> sequences;
    std::vector<const std::vector<std::uint8_t>*> masks;
    for (const auto& ex : dataset) {
        bool any = false;
        for (auto b : ex.answer_mask) any |= (b != 0);
        require(any, "fine-tuning example lacks answer positions");
        sequences.push_back(ex.tokens);
        masks.push_back(&ex.answer_mask);
    }
    return detail::run_training(model, sequences, masks, hp);
}

// Greedy continuation of a context by n tokens (argmax, lowest id wins ties).
template <typename S>
std::vector<int> greedy_decode(const Model<S>& model, std::vector<int> context, int n_tokens) {
    std::vector<int> out;
    for (int t = 0; t < n_tokens; ++t) {
        auto logits = model.forward(context);
        const int v = logits.cols();
        const std::size_t last = static_cast<std::size_t>(logits.rows() - 1) * v;
        int best = 0;
        for (int j = 1; j < v; ++j)
            if (logits.data()[last + j] > logits.data()[last + best]) best = j;
        out.push_back(best);
        context.push_back(best);
    }
    return out;
}

struct EvalResult {
    double em = 0.0;
    double pm = 0.0;
    int count = 0;
};

// EM/PM of greedy answers over held-out examples.
template <typename S>
EvalResult evaluate(const Model<S>& model, const std::vector<task::NoisyContextExample>& examples) {
    EvalResult r;
    for (const auto& ex : examples) {
        auto asm_ex = task::assemble_tokens(ex);
        std::vector<int> context(asm_ex.tokens.begin(),
                                 asm_ex.tokens.end() - static_cast<long>(ex.answer.size()));
        auto pred = greedy_decode(model, context, static_cast<int>(ex.answer.size()));
        r.em += task::exact_match(pred, ex.answer);
        r.pm += task::partial_match(pred, ex.answer);
        ++r.count;
    }
    if (r.count > 0) {
        r.em /= r.count;
        r.pm /= r.count;
    }
    return r;
}

}  // namespace opamp
