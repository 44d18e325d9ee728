#pragma once

// Experiment harness: per-document attention tracing, fine-tuning cells
// over (method, CMRR, noise ratio, seed), and CSV/SVG assembly. Cell
// execution may run on several threads; result order is fixed by the
// config, not by completion order.

#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

#include "opamp/checkpoint.hpp"
#include "opamp/report.hpp"
#include "opamp/train.hpp"

namespace opamp {

// ---------------------------------------------------------------------------
// Attention tracing
// ---------------------------------------------------------------------------

struct AttentionTrace {
    std::vector<double> doc_scores;  // probability vector over documents
    int golden_index = 0;
};

// Per-document share of M-bar mass at the first answer-generation
// position. Averages heads (and all layers unless one is selected),
// clamps negative per-document aggregates to 0, then normalizes.
template <typename S>
AttentionTrace trace_attention(const Model<S>& model, const task::NoisyContextExample& ex,
                               int layer = -1) {
    const auto assembled = task::assemble_tokens(ex);
    std::vector<int> context(assembled.tokens.begin(),
                             assembled.tokens.end() - static_cast<long>(ex.answer.size()));
    require(static_cast<int>(context.size()) <= model.cfg.max_seq_len,
            "traced example exceeds model sequence budget");
    ForwardTrace<S> fwd;
    model.forward(context, &fwd);
    const int row = static_cast<int>(context.size()) - 1;

    AttentionTrace out;
    out.golden_index = ex.golden_index;
    out.doc_scores.assign(assembled.doc_spans.size(), 0.0);
    int contributions = 0;
    for (int li = 0; li < static_cast<int>(fwd.layers.size()); ++li) {
        if (layer >= 0 && li != layer) continue;
        for (const auto& m : fwd.layers[li].combined) {
            const int n = m.cols();
            require(n == static_cast<int>(context.size()), "trace span/sequence mismatch");
            for (std::size_t di = 0; di < assembled.doc_spans.size(); ++di) {
                double mass = 0.0;
                for (int j = assembled.doc_spans[di].first; j < assembled.doc_spans[di].second; ++j)
                    mass += static_cast<double>(m.at(row, j));
                out.doc_scores[di] += mass;
            }
            ++contributions;
        }
    }
    require(contributions > 0, "trace selected no layers");
    double total = 0.0;
    for (auto& s : out.doc_scores) {
        s = std::max(0.0, s / contributions);
        total += s;
    }
    if (total > 0.0)
        for (auto& s : out.doc_scores) s /= total;
    else
        for (auto& s : out.doc_scores) s = 1.0 / out.doc_scores.size();
    return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    ExperimentConfig() {
        task.min_filler = 4;  // constant-length documents
        task.max_filler = 4;
        pretrain_hp.learning_rate = 3e-3;
        pretrain_hp.epochs = 12;
        pretrain_noisy_hp.learning_rate = 2e-3;
        pretrain_noisy_hp.epochs = 4;
        finetune_hp.learning_rate = 1e-3;
        finetune_hp.epochs = 6;
        finetune_hp.joint_lowrank = true;
    }

    task::TaskConfig task;  // noise_ratio is overridden per cell
    int train_examples = 1024;
    int eval_examples = 96;
    int shift_examples = 34;  // held-out early-golden examples per seed
    int pretrain_examples = 2048;
    int pretrain_noisy_examples = 4096;
    int pretrain_clean_mix = 512;  // clean examples mixed into phase two
    double pretrain_noise_ratio = 0.9;

    ModelConfig model;
    TrainingHyperparams pretrain_hp;
    TrainingHyperparams pretrain_noisy_hp;  // phase-two (recency bias) training
    TrainingHyperparams finetune_hp;

    std::vector<double> k_list{1, 5, 10, 20};
    std::vector<double> rho_list{0.0, 0.8, 0.9};
    std::vector<std::uint64_t> seeds{1, 2, 3};
    std::vector<std::string> methods{"lowrank-baseline", "opamp"};

    std::string out_dir = "out";
    bool reuse_base = false;
    bool eval_only = false;
    bool save_cell_checkpoints = false;
    int threads = 4;

    void validate() const {
        require(!k_list.empty() && !rho_list.empty() && !seeds.empty() && !methods.empty(),
                "k/rho/seed/method lists must be nonempty");
        for (std::size_t i = 0; i < seeds.size(); ++i)
            for (std::size_t j = i + 1; j < seeds.size(); ++j)
                require(seeds[i] != seeds[j], "seeds must be distinct");
        for (const auto& m : methods)
            require(m == "opamp" || m == "lowrank-baseline",
                    "unknown method in config: " + m);
        model.validate();
        pretrain_hp.validate();
        pretrain_noisy_hp.validate();
        finetune_hp.validate();
    }
};

ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig experiment_config_from_json_text(const std::string& text);

// One (method, K, rho, seed) result. golden_* are mean golden-document
// attention scores over the eval set, before and after fine-tuning.
struct CellResult {
    std::string method;
    double cmrr = 0.0;  // 0 for the low-rank baseline
    double rho = 0.0;
    std::uint64_t seed = 0;
    double em = 0.0;
    double pm = 0.0;
    double golden_before = 0.0;
    double golden_after = 0.0;
    double improved_frac = 0.0;  // fraction of eval examples whose golden score rose
    // Same comparison on a held-out set whose golden always sits in the
    // early half, where a recency-biased base fails; counts, for pooling.
    int shift_improved = 0;
    int shift_total = 0;
    std::vector<double> doc_profile;  // mean post-training score per document position
};

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

template <typename S>
Model<S> clone_base_model(Model<S>& src) {
    require(src.cfg.kind == AttentionKind::Standard, "clone_base_model expects a base model");
    Model<S> dst = build_base_model<S>(src.cfg, 0);
    auto a = src.named_params();
    auto b = dst.named_params();
    require(a.size() == b.size(), "clone: parameter set mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) b[i].second.data() = a[i].second.data();
    return dst;
}

namespace detail {

template <typename S>
std::vector<std::vector<int>> pretrain_corpus(const ExperimentConfig& cfg, std::uint64_t seed) {
    task::TaskConfig tc = cfg.task;
    tc.noise_ratio = 0.0;  // phase one trains a plain single-document LM
    tc.seed = seed * 1000003ULL + 17;
    std::vector<std::vector<int>> corpus;
    for (int i = 0; i < cfg.pretrain_examples; ++i)
        corpus.push_back(task::assemble_tokens(task::generate_example(tc, i)).tokens);
    return corpus;
}

// Two-phase base training. Phase one is next-token pretraining on clean
// single-document examples. Phase two is answer-masked training on noisy
// examples whose golden document always sits in the later half of the
// context; the base learns the lookup circuit with a recency bias that
// fine-tuning at uniform-random golden positions must then overcome.
template <typename S>
Model<S> train_base_model(const ExperimentConfig& cfg, std::uint64_t seed) {
    Model<S> base = build_base_model<S>(cfg.model, seed);
    TrainingHyperparams hp = cfg.pretrain_hp;
    hp.seed = seed;
    pretrain(base, pretrain_corpus<S>(cfg, seed), hp);

    if (cfg.pretrain_noisy_examples > 0) {
        task::TaskConfig noisy = cfg.task;
        noisy.noise_ratio = cfg.pretrain_noise_ratio;
        noisy.seed = seed * 1000003ULL + 29;
        noisy.golden_policy = task::GoldenPolicy::LateHalf;
        std::vector<task::AssembledExample> data;
        for (int i = 0; i < cfg.pretrain_noisy_examples; ++i)
            data.push_back(task::assemble_tokens(task::generate_example(noisy, i)));
        // A clean slice keeps the single-document behavior from drifting.
        task::TaskConfig clean = cfg.task;
        clean.noise_ratio = 0.0;
        clean.seed = seed * 1000003ULL + 31;
        for (int i = 0; i < cfg.pretrain_clean_mix; ++i)
            data.push_back(task::assemble_tokens(task::generate_example(clean, i)));
        std::vector<std::vector<int>> sequences;
        std::vector<const std::vector<std::uint8_t>*> masks;
        for (const auto& ex : data) {
            sequences.push_back(ex.tokens);
            masks.push_back(&ex.answer_mask);
        }
        TrainingHyperparams hp2 = cfg.pretrain_noisy_hp;
        hp2.seed = seed * 0x9e3779b97f4a7c15ULL + 3;
        detail::run_training(base, sequences, masks, hp2);
    }
    return base;
}

template <typename S>
Model<S> prepare_base(const ExperimentConfig& cfg, std::uint64_t seed) {
    namespace fs = std::filesystem;
    const std::string path = cfg.out_dir + "/base_seed" + std::to_string(seed) + ".ckpt";
    if (cfg.reuse_base) {
        if (!fs::exists(path))
            throw CheckpointError("reuse_base set but base checkpoint missing: " + path);
        return load_checkpoint<S>(path);
    }
    Model<S> base = train_base_model<S>(cfg, seed);
    save_checkpoint(base, path);
    return base;
}

inline std::string cell_tag(const std::string& method, double k, double rho,
                            std::uint64_t seed) {
    std::ostringstream os;
    os << method << "_K" << k << "_rho" << rho << "_seed" << seed;
    return os.str();
}

}  // namespace detail

template <typename S>
CellResult run_cell(const ExperimentConfig& cfg, Model<S>& base, const std::string& method,
                    double k, double rho, std::uint64_t seed) {
    CellResult r;
    r.method = method;
    r.cmrr = method == "opamp" ? k : 0.0;
    r.rho = rho;
    r.seed = seed;

    task::TaskConfig train_tc = cfg.task;
    train_tc.noise_ratio = rho;
    train_tc.seed = seed;
    task::TaskConfig eval_tc = train_tc;
    eval_tc.seed = seed * 2654435761ULL + 7777;

    std::vector<task::AssembledExample> train_set;
    for (int i = 0; i < cfg.train_examples; ++i)
        train_set.push_back(task::assemble_tokens(task::generate_example(train_tc, i)));
    std::vector<task::NoisyContextExample> eval_set;
    for (int i = 0; i < cfg.eval_examples; ++i)
        eval_set.push_back(task::generate_example(eval_tc, i));
    task::TaskConfig shift_tc = eval_tc;
    shift_tc.seed = seed * 2654435761ULL + 8888;
    shift_tc.golden_policy = task::GoldenPolicy::EarlyHalf;
    std::vector<task::NoisyContextExample> shift_set;
    for (int i = 0; i < cfg.shift_examples; ++i)
        shift_set.push_back(task::generate_example(shift_tc, i));

    const std::string ckpt = cfg.out_dir + "/ft_" + detail::cell_tag(method, k, rho, seed) + ".ckpt";

    Model<S> model = [&]() -> Model<S> {
        if (cfg.eval_only) {
            if (!std::filesystem::exists(ckpt))
                throw CheckpointError("eval_only set but cell checkpoint missing: " + ckpt);
            return load_checkpoint<S>(ckpt);
        }
        Model<S> m = clone_base_model(base);
        if (method == "opamp") {
            attach_opamp_adapters(m, k, cfg.finetune_hp.adapter_dim, seed);
            if (cfg.finetune_hp.joint_lowrank)
                attach_joint_lowrank(m, cfg.finetune_hp.lowrank_r, cfg.finetune_hp.lowrank_alpha,
                                     seed ^ 0xabcdefULL);
        } else {
            attach_lowrank_baseline(m, cfg.finetune_hp.lowrank_r, cfg.finetune_hp.lowrank_alpha,
                                    seed);
        }
        return m;
    }();

    std::vector<double> before(eval_set.size());
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        auto tr = trace_attention(model, eval_set[i]);
        before[i] = tr.doc_scores[tr.golden_index];
    }
    std::vector<double> shift_before(shift_set.size());
    for (std::size_t i = 0; i < shift_set.size(); ++i) {
        auto tr = trace_attention(model, shift_set[i]);
        shift_before[i] = tr.doc_scores[tr.golden_index];
    }

    if (!cfg.eval_only) {
        TrainingHyperparams hp = cfg.finetune_hp;
        hp.seed = seed;
        finetune(model, train_set, hp);
        if (cfg.save_cell_checkpoints) save_checkpoint(model, ckpt);
    }

    auto eval = evaluate(model, eval_set);
    r.em = eval.em;
    r.pm = eval.pm;

    int improved = 0;
    double sum_before = 0, sum_after = 0;
    r.doc_profile.assign(task::document_count(rho), 0.0);
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        auto tr = trace_attention(model, eval_set[i]);
        const double after = tr.doc_scores[tr.golden_index];
        sum_before += before[i];
        sum_after += after;
        if (after > before[i]) ++improved;
        for (std::size_t di = 0; di < tr.doc_scores.size(); ++di)
            r.doc_profile[di] += tr.doc_scores[di] / eval_set.size();
    }
    r.golden_before = sum_before / eval_set.size();
    r.golden_after = sum_after / eval_set.size();
    r.improved_frac = static_cast<double>(improved) / eval_set.size();
    for (std::size_t i = 0; i < shift_set.size(); ++i) {
        auto tr = trace_attention(model, shift_set[i]);
        if (tr.doc_scores[tr.golden_index] > shift_before[i]) ++r.shift_improved;
    }
    r.shift_total = static_cast<int>(shift_set.size());
    return r;
}

// Full grid. Bases are prepared per seed, then cells run (possibly in
// parallel); metrics.csv is written in config order with mean/stddev
// aggregate rows per (method, K, rho).
template <typename S>
std::vector<CellResult> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);

    // One base per seed; preparation is independent, so run it concurrently.
    std::map<std::uint64_t, Model<S>> bases;
    {
        std::vector<std::optional<Model<S>>> prepared(cfg.seeds.size());
        std::vector<std::thread> prep;
        std::mutex prep_error_mutex;
        std::exception_ptr prep_error;
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
            prep.emplace_back([&, si]() {
                try {
                    prepared[si] = detail::prepare_base<S>(cfg, cfg.seeds[si]);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(prep_error_mutex);
                    if (!prep_error) prep_error = std::current_exception();
                }
            });
        for (auto& th : prep) th.join();
        if (prep_error) std::rethrow_exception(prep_error);
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
            bases.emplace(cfg.seeds[si], std::move(*prepared[si]));
    }

    struct Cell {
        std::string method;
        double k;
        double rho;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& method : cfg.methods) {
        const std::vector<double> ks = method == "opamp" ? cfg.k_list : std::vector<double>{0.0};
        for (double k : ks)
            for (double rho : cfg.rho_list)
                for (auto seed : cfg.seeds) cells.push_back({method, k, rho, seed});
    }

    std::vector<CellResult> results(cells.size());
    const int nthreads = std::max(1, cfg.threads);
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    for (int t = 0; t < nthreads; ++t)
        pool.emplace_back([&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                try {
                    const auto& c = cells[i];
                    results[i] = run_cell(cfg, bases.at(c.seed), c.method, c.k, c.rho, c.seed);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);

    // metrics.csv: one row per cell plus aggregates, stable order.
    std::vector<std::vector<std::string>> rows;
    std::size_t i = 0;
    for (const auto& method : cfg.methods) {
        const std::vector<double> ks = method == "opamp" ? cfg.k_list : std::vector<double>{0.0};
        for (double k : ks)
            for (double rho : cfg.rho_list) {
                double em_sum = 0, em_sq = 0, pm_sum = 0;
                for (std::size_t s = 0; s < cfg.seeds.size(); ++s, ++i) {
                    const auto& r = results[i];
                    rows.push_back({r.method, report::format_double(r.cmrr),
                                    report::format_double(r.rho), std::to_string(r.seed),
                                    report::format_double(r.em), report::format_double(r.pm)});
                    em_sum += r.em;
                    em_sq += r.em * r.em;
                    pm_sum += r.pm;
                }
                const double n = static_cast<double>(cfg.seeds.size());
                const double em_mean = em_sum / n;
                const double var = std::max(0.0, em_sq / n - em_mean * em_mean);
                rows.push_back({method, report::format_double(method == "opamp" ? k : 0.0),
                                report::format_double(rho), "mean",
                                report::format_double(em_mean),
                                report::format_double(pm_sum / n)});
                rows.push_back({method, report::format_double(method == "opamp" ? k : 0.0),
                                report::format_double(rho), "stddev",
                                report::format_double(std::sqrt(var)), report::format_double(0.0)});
            }
    }
    report::write_csv(cfg.out_dir + "/metrics.csv",
                      {"method", "cmrr", "noise_ratio", "seed", "em", "pm"}, rows);
    return results;
}

// Mean EM per K from a result set (opamp cells at one rho).
inline std::map<double, double> mean_em_by_k(const std::vector<CellResult>& results, double rho) {
    std::map<double, std::pair<double, int>> acc;
    for (const auto& r : results) {
        if (r.method != "opamp" || r.rho != rho) continue;
        acc[r.cmrr].first += r.em;
        acc[r.cmrr].second += 1;
    }
    std::map<double, double> out;
    for (auto& [k, p] : acc) out[k] = p.first / p.second;
    return out;
}

namespace detail {

inline std::string k_label(double k) {
    std::ostringstream os;
    os << "K=" << k;
    return os.str();
}

}  // namespace detail

// CMRR sweep: runs the grid, then plots mean EM against K (one line per
// noise ratio) and the mean per-document attention profile (one bar series
// per K, first noise ratio in the list).
template <typename S>
std::vector<CellResult> cmrr_sweep(const ExperimentConfig& cfg) {
    auto results = run_experiment<S>(cfg);

    std::vector<report::Series> lines;
    for (double rho : cfg.rho_list) {
        report::Series s;
        std::ostringstream label;
        label << "rho=" << rho;
        s.label = label.str();
        auto by_k = mean_em_by_k(results, rho);
        for (double k : cfg.k_list) {
            s.x.push_back(k);
            s.y.push_back(by_k.at(k));
        }
        lines.push_back(std::move(s));
    }
    report::write_text_file(cfg.out_dir + "/em_vs_cmrr.svg",
                            report::svg_line_chart("EM vs CMRR", "K", "exact match", lines));

    const double rho0 = cfg.rho_list.front();
    std::vector<std::string> series_labels;
    for (double k : cfg.k_list) series_labels.push_back(detail::k_label(k));
    std::vector<report::BarGroup> groups(task::document_count(rho0));
    for (std::size_t di = 0; di < groups.size(); ++di)
        groups[di].label = "doc " + std::to_string(di);
    for (double k : cfg.k_list) {
        std::vector<double> profile(groups.size(), 0.0);
        int n = 0;
        for (const auto& r : results)
            if (r.method == "opamp" && r.cmrr == k && r.rho == rho0) {
                for (std::size_t di = 0; di < profile.size(); ++di)
                    profile[di] += r.doc_profile[di];
                ++n;
            }
        for (std::size_t di = 0; di < groups.size(); ++di)
            groups[di].values.push_back(n ? profile[di] / n : 0.0);
    }
    report::write_text_file(
        cfg.out_dir + "/attention_by_doc.svg",
        report::svg_bar_chart("Mean attention per document", series_labels, groups));
    return results;
}

// Noise sweep: plots mean EM against rho, one line per method (opamp lines
// split by K).
template <typename S>
std::vector<CellResult> noise_sweep(const ExperimentConfig& cfg) {
    auto results = run_experiment<S>(cfg);

    std::vector<report::Series> lines;
    for (const auto& method : cfg.methods) {
        const std::vector<double> ks =
            method == "opamp" ? cfg.k_list : std::vector<double>{0.0};
        for (double k : ks) {
            report::Series s;
            s.label = method == "opamp" ? detail::k_label(k) : method;
            for (double rho : cfg.rho_list) {
                double sum = 0;
                int n = 0;
                for (const auto& r : results)
                    if (r.method == method && r.rho == rho &&
                        (method != "opamp" || r.cmrr == k)) {
                        sum += r.em;
                        ++n;
                    }
                s.x.push_back(rho);
                s.y.push_back(n ? sum / n : 0.0);
            }
            lines.push_back(std::move(s));
        }
    }
    report::write_text_file(
        cfg.out_dir + "/em_vs_noise.svg",
        report::svg_line_chart("EM vs noise ratio", "noise ratio", "exact match", lines));
    return results;
}

inline double mean_em_baseline(const std::vector<CellResult>& results, double rho) {
    double sum = 0;
    int n = 0;
    for (const auto& r : results)
        if (r.method == "lowrank-baseline" && r.rho == rho) {
            sum += r.em;
            ++n;
        }
    return n ? sum / n : 0.0;
}

}  // namespace opamp
