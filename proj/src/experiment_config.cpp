#include <fstream>

#include <json.hpp>

#include "opamp/experiment.hpp"

namespace opamp {

namespace {

using nlohmann::json;

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_task(const json& j, task::TaskConfig& t) {
    maybe(j, "vocab_size", t.vocab_size);
    maybe(j, "min_filler", t.min_filler);
    maybe(j, "max_filler", t.max_filler);
    maybe(j, "answer_len", t.answer_len);
    maybe(j, "max_seq_len", t.max_seq_len);
    if (j.contains("golden_policy")) {
        const auto p = j.at("golden_policy").get<std::string>();
        if (p == "uniform-random")
            t.golden_policy = task::GoldenPolicy::UniformRandom;
        else if (p == "fixed-index")
            t.golden_policy = task::GoldenPolicy::FixedIndex;
        else if (p == "late-half")
            t.golden_policy = task::GoldenPolicy::LateHalf;
        else if (p == "early-half")
            t.golden_policy = task::GoldenPolicy::EarlyHalf;
        else
            throw std::invalid_argument("unknown golden_policy: " + p);
    }
    maybe(j, "fixed_golden_index", t.fixed_golden_index);
}

void parse_model(const json& j, ModelConfig& m) {
    maybe(j, "d", m.d);
    maybe(j, "heads", m.heads);
    maybe(j, "layers", m.layers);
    maybe(j, "ffn_width", m.ffn_width);
}

void parse_hp(const json& j, TrainingHyperparams& hp) {
    maybe(j, "learning_rate", hp.learning_rate);
    maybe(j, "warmup_ratio", hp.warmup_ratio);
    maybe(j, "epochs", hp.epochs);
    maybe(j, "batch_size", hp.batch_size);
    maybe(j, "weight_decay", hp.weight_decay);
    maybe(j, "adapter_dim", hp.adapter_dim);
    maybe(j, "lowrank_r", hp.lowrank_r);
    maybe(j, "lowrank_alpha", hp.lowrank_alpha);
    maybe(j, "joint_lowrank", hp.joint_lowrank);
}

}  // namespace

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
    const json j = json::parse(text);
    ExperimentConfig cfg;
    if (j.contains("task")) parse_task(j.at("task"), cfg.task);
    if (j.contains("model")) parse_model(j.at("model"), cfg.model);
    if (j.contains("pretrain")) parse_hp(j.at("pretrain"), cfg.pretrain_hp);
    if (j.contains("pretrain_noisy")) parse_hp(j.at("pretrain_noisy"), cfg.pretrain_noisy_hp);
    if (j.contains("finetune")) parse_hp(j.at("finetune"), cfg.finetune_hp);
    maybe(j, "train_examples", cfg.train_examples);
    maybe(j, "eval_examples", cfg.eval_examples);
    maybe(j, "shift_examples", cfg.shift_examples);
    maybe(j, "pretrain_examples", cfg.pretrain_examples);
    maybe(j, "pretrain_noisy_examples", cfg.pretrain_noisy_examples);
    maybe(j, "pretrain_clean_mix", cfg.pretrain_clean_mix);
    maybe(j, "pretrain_noise_ratio", cfg.pretrain_noise_ratio);
    maybe(j, "k_list", cfg.k_list);
    maybe(j, "rho_list", cfg.rho_list);
    maybe(j, "seeds", cfg.seeds);
    maybe(j, "methods", cfg.methods);
    maybe(j, "out_dir", cfg.out_dir);
    maybe(j, "reuse_base", cfg.reuse_base);
    maybe(j, "eval_only", cfg.eval_only);
    maybe(j, "save_cell_checkpoints", cfg.save_cell_checkpoints);
    maybe(j, "threads", cfg.threads);

    // The model reads the task's token stream directly.
    cfg.model.vocab_size = cfg.task.vocab_size;
    cfg.model.max_seq_len = cfg.task.max_seq_len;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return experiment_config_from_json_text(text);
}

}  // namespace opamp
