// Experiment driver. Subcommands cover the full loop: data generation,
// base pretraining, adapter fine-tuning, evaluation, attention tracing,
// and the CMRR / noise-ratio sweeps. Exit codes: 0 success, 1 usage,
// 2 data or config error, 3 internal invariant violation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "opamp/circuit.hpp"
#include "opamp/experiment.hpp"

namespace {

using namespace opamp;

struct GlobalOptions {
    std::uint64_t seed = 1;
    std::string config;
    std::string out_dir = "out";
    std::string precision = "f32";
};

ExperimentConfig load_config_or_default(const GlobalOptions& g) {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{}
                                            : load_experiment_config(g.config);
    cfg.out_dir = g.out_dir;
    return cfg;
}

std::string fmt6(double v) {
    if (std::isinf(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::vector<task::NoisyContextExample> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open dataset: " + path);
    std::vector<task::NoisyContextExample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(task::from_json_line(line));
    }
    if (out.empty()) throw std::invalid_argument("dataset is empty: " + path);
    return out;
}

std::vector<task::NoisyContextExample> make_examples(const ExperimentConfig& cfg, double rho,
                                                     int count, std::uint64_t seed) {
    task::TaskConfig tc = cfg.task;
    tc.noise_ratio = rho;
    tc.seed = seed;
    std::vector<task::NoisyContextExample> out;
    for (int i = 0; i < count; ++i) out.push_back(task::generate_example(tc, i));
    return out;
}

int cmd_gen_data(const GlobalOptions& g, double rho, int count, const std::string& output) {
    auto cfg = load_config_or_default(g);
    std::filesystem::create_directories(g.out_dir);
    const std::string path = output.empty() ? g.out_dir + "/data.jsonl" : output;
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot write: " + path);
    for (const auto& ex : make_examples(cfg, rho, count, g.seed))
        out << task::to_json_line(ex) << "\n";
    std::cout << "wrote " << count << " examples to " << path << "\n";
    return 0;
}

template <typename S>
int cmd_pretrain(const GlobalOptions& g, const std::string& output) {
    auto cfg = load_config_or_default(g);
    cfg.validate();
    std::filesystem::create_directories(g.out_dir);
    auto model = detail::train_base_model<S>(cfg, g.seed);
    const std::string path = output.empty() ? g.out_dir + "/base.ckpt" : output;
    save_checkpoint(model, path);
    std::cout << "saved " << path << "\n";
    return 0;
}

template <typename S>
int cmd_finetune(const GlobalOptions& g, const std::string& base, const std::string& method,
                 double cmrr, double rho, const std::string& data, const std::string& output) {
    auto cfg = load_config_or_default(g);
    std::filesystem::create_directories(g.out_dir);
    auto model = load_checkpoint<S>(base);

    if (method == "opamp") {
        attach_opamp_adapters(model, cmrr, cfg.finetune_hp.adapter_dim, g.seed);
        if (cfg.finetune_hp.joint_lowrank)
            attach_joint_lowrank(model, cfg.finetune_hp.lowrank_r, cfg.finetune_hp.lowrank_alpha,
                                 g.seed ^ 0xabcdefULL);
    } else if (method == "lowrank-baseline") {
        attach_lowrank_baseline(model, cfg.finetune_hp.lowrank_r, cfg.finetune_hp.lowrank_alpha,
                                g.seed);
    } else {
        throw std::invalid_argument("unknown method: " + method);
    }

    auto examples = data.empty() ? make_examples(cfg, rho, cfg.train_examples, g.seed)
                                 : read_jsonl(data);
    std::vector<task::AssembledExample> train_set;
    for (const auto& ex : examples) train_set.push_back(task::assemble_tokens(ex));

    TrainingHyperparams hp = cfg.finetune_hp;
    hp.seed = g.seed;
    auto log = finetune(model, train_set, hp);
    const std::string path = output.empty() ? g.out_dir + "/finetuned.ckpt" : output;
    save_checkpoint(model, path);
    if (!log.losses.empty())
        std::cout << "loss: " << fmt6(log.losses.front()) << " -> " << fmt6(log.losses.back())
                  << "\n";
    std::cout << "saved " << path << "\n";
    return 0;
}

template <typename S>
int cmd_eval(const GlobalOptions& g, const std::string& model_path, double rho, int count,
             const std::string& data) {
    auto cfg = load_config_or_default(g);
    auto model = load_checkpoint<S>(model_path);
    auto examples = data.empty() ? make_examples(cfg, rho, count, g.seed * 2654435761ULL + 7777)
                                 : read_jsonl(data);
    auto result = evaluate(model, examples);
    std::cout << "count = " << result.count << "\n";
    std::cout << "em = " << fmt6(result.em) << "\n";
    std::cout << "pm = " << fmt6(result.pm) << "\n";
    return 0;
}

template <typename S>
int cmd_trace(const GlobalOptions& g, const std::string& model_path, double rho, int example,
              const std::string& data, int layer) {
    auto cfg = load_config_or_default(g);
    std::filesystem::create_directories(g.out_dir);
    auto model = load_checkpoint<S>(model_path);
    auto examples = data.empty() ? make_examples(cfg, rho, example + 1, g.seed)
                                 : read_jsonl(data);
    if (example < 0 || example >= static_cast<int>(examples.size()))
        throw std::invalid_argument("example index out of range");
    auto tr = trace_attention(model, examples[example], layer);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t di = 0; di < tr.doc_scores.size(); ++di)
        rows.push_back({std::to_string(di), report::format_double(tr.doc_scores[di]),
                        static_cast<int>(di) == tr.golden_index ? "1" : "0"});
    const std::string path = g.out_dir + "/trace_" + std::to_string(example) + ".csv";
    report::write_csv(path, {"doc_index", "score", "golden"}, rows);

    for (std::size_t di = 0; di < tr.doc_scores.size(); ++di)
        std::cout << "doc " << di << (static_cast<int>(di) == tr.golden_index ? " *" : "  ")
                  << " " << fmt6(tr.doc_scores[di]) << "\n";
    std::cout << "wrote " << path << "\n";
    return 0;
}

template <typename S>
int cmd_sweep(const GlobalOptions& g, bool cmrr_axis) {
    auto cfg = load_config_or_default(g);
    cfg.validate();
    auto results = cmrr_axis ? cmrr_sweep<S>(cfg) : noise_sweep<S>(cfg);
    for (const auto& r : results)
        std::cout << r.method << " K=" << fmt6(r.cmrr) << " rho=" << fmt6(r.rho) << " seed="
                  << r.seed << " em=" << fmt6(r.em) << " pm=" << fmt6(r.pm) << "\n";
    std::cout << "wrote " << cfg.out_dir << "/metrics.csv\n";
    return 0;
}

int cmd_circuit(double r1, double r2, double r3, double r4) {
    auto g = circuit::gains_from_resistors({r1, r2, r3, r4});
    std::cout << "A_d = " << fmt6(g.differential) << "\n";
    std::cout << "A_c = " << fmt6(g.common_mode) << "\n";
    std::cout << "K = " << fmt6(g.cmrr) << "\n";
    return 0;
}

template <typename S>
int dispatch(const GlobalOptions& g, const std::string& sub,
             const std::map<std::string, std::string>& s,
             const std::map<std::string, double>& d, const std::map<std::string, int>& n) {
    if (sub == "gen-data") return cmd_gen_data(g, d.at("rho"), n.at("count"), s.at("output"));
    if (sub == "pretrain") return cmd_pretrain<S>(g, s.at("output"));
    if (sub == "finetune")
        return cmd_finetune<S>(g, s.at("base"), s.at("method"), d.at("cmrr"), d.at("rho"),
                               s.at("data"), s.at("output"));
    if (sub == "eval") return cmd_eval<S>(g, s.at("model"), d.at("rho"), n.at("count"), s.at("data"));
    if (sub == "trace")
        return cmd_trace<S>(g, s.at("model"), d.at("rho"), n.at("example"), s.at("data"),
                            n.at("layer"));
    if (sub == "sweep-cmrr") return cmd_sweep<S>(g, true);
    if (sub == "sweep-noise") return cmd_sweep<S>(g, false);
    throw std::logic_error("unhandled subcommand: " + sub);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OpAmp attention experiment driver"};
    app.require_subcommand(1);

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Run seed");
    app.add_option("--config", g.config, "JSON experiment config");
    app.add_option("--out-dir", g.out_dir, "Output directory");
    app.add_option("--precision", g.precision, "Scalar precision")
        ->check(CLI::IsMember({"f32", "f64"}));

    std::map<std::string, std::string> s{{"output", ""}, {"base", ""},    {"method", "opamp"},
                                         {"data", ""},   {"model", ""}};
    std::map<std::string, double> d{{"rho", 0.9}, {"cmrr", 10.0}};
    std::map<std::string, int> n{{"count", 64}, {"example", 0}, {"layer", -1}};

    auto* gen = app.add_subcommand("gen-data", "Write a JSONL dataset");
    gen->add_option("--rho", d["rho"], "Noise ratio");
    gen->add_option("--count", n["count"], "Example count");
    gen->add_option("--output", s["output"], "Output path (default <out-dir>/data.jsonl)");

    auto* pre = app.add_subcommand("pretrain", "Pretrain a base model on the clean task");
    pre->add_option("--output", s["output"], "Checkpoint path (default <out-dir>/base.ckpt)");

    auto* ft = app.add_subcommand("finetune", "Attach adapters and fine-tune");
    ft->add_option("--base", s["base"], "Base checkpoint")->required();
    ft->add_option("--method", s["method"], "opamp or lowrank-baseline")
        ->check(CLI::IsMember({"opamp", "lowrank-baseline"}));
    ft->add_option("--cmrr", d["cmrr"], "Differential to common-mode gain ratio K");
    ft->add_option("--rho", d["rho"], "Noise ratio for generated training data");
    ft->add_option("--data", s["data"], "JSONL training data (overrides generation)");
    ft->add_option("--output", s["output"], "Checkpoint path (default <out-dir>/finetuned.ckpt)");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--model", s["model"], "Model checkpoint")->required();
    ev->add_option("--rho", d["rho"], "Noise ratio for generated eval data");
    ev->add_option("--count", n["count"], "Eval example count");
    ev->add_option("--data", s["data"], "JSONL eval data (overrides generation)");

    auto* tr = app.add_subcommand("trace", "Per-document attention trace");
    tr->add_option("--model", s["model"], "Model checkpoint")->required();
    tr->add_option("--rho", d["rho"], "Noise ratio for generated examples");
    tr->add_option("--example", n["example"], "Example index");
    tr->add_option("--layer", n["layer"], "Layer to trace (-1 = average all)");
    tr->add_option("--data", s["data"], "JSONL data (overrides generation)");

    app.add_subcommand("sweep-cmrr", "Grid over K; emits metrics.csv and SVG charts");
    app.add_subcommand("sweep-noise", "Grid over noise ratio; emits metrics.csv and SVG charts");

    auto* circ = app.add_subcommand("circuit", "Print amplifier gains for a resistor network");
    std::vector<double> resistors;
    circ->add_option("resistors", resistors, "R1 R2 R3 R4")->expected(4)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    const std::string sub = app.get_subcommands().front()->get_name();
    try {
        if (sub == "circuit")
            return cmd_circuit(resistors[0], resistors[1], resistors[2], resistors[3]);
        return g.precision == "f64" ? dispatch<double>(g, sub, s, d, n)
                                    : dispatch<float>(g, sub, s, d, n);
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
