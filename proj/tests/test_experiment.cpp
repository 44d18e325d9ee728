#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "opamp/experiment.hpp"
#include "opamp/report.hpp"

using namespace opamp;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig smoke_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.model.vocab_size = 32;
    cfg.model.d = 16;
    cfg.model.heads = 2;
    cfg.model.layers = 1;
    cfg.model.ffn_width = 32;
    cfg.model.max_seq_len = 128;
    cfg.task.vocab_size = 32;
    cfg.task.max_seq_len = 128;
    cfg.pretrain_examples = 16;
    cfg.pretrain_noisy_examples = 8;
    cfg.pretrain_clean_mix = 4;
    cfg.train_examples = 8;
    cfg.eval_examples = 4;
    cfg.shift_examples = 4;
    cfg.pretrain_hp.epochs = 1;
    cfg.pretrain_noisy_hp.epochs = 1;
    cfg.finetune_hp.epochs = 1;
    cfg.finetune_hp.adapter_dim = 4;
    cfg.finetune_hp.lowrank_r = 4;
    cfg.k_list = {1.0, 10.0};
    cfg.rho_list = {0.8};
    cfg.seeds = {1, 2};
    cfg.threads = 4;
    cfg.out_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_CASE("attention trace over a single document is [1.0]") {
    ModelConfig mc;
    mc.vocab_size = 32;
    mc.d = 16;
    mc.heads = 2;
    mc.layers = 1;
    mc.ffn_width = 32;
    auto model = build_base_model<float>(mc, 3);
    attach_opamp_adapters(model, 10.0, 4, 5);

    task::TaskConfig tc;
    tc.vocab_size = 32;
    tc.noise_ratio = 0.0;
    tc.seed = 2;
    auto ex = task::generate_example(tc, 0);
    auto tr = trace_attention(model, ex);
    REQUIRE(tr.doc_scores.size() == 1);
    CHECK(tr.doc_scores[0] == doctest::Approx(1.0));
    CHECK(tr.golden_index == 0);
}

TEST_CASE("attention trace is a probability vector over documents") {
    ModelConfig mc;
    mc.vocab_size = 32;
    mc.d = 16;
    mc.heads = 2;
    mc.layers = 2;
    mc.ffn_width = 32;
    auto model = build_base_model<float>(mc, 6);
    attach_opamp_adapters(model, 5.0, 4, 7);

    task::TaskConfig tc;
    tc.vocab_size = 32;
    tc.noise_ratio = 0.9;
    tc.seed = 8;
    for (int i = 0; i < 5; ++i) {
        auto ex = task::generate_example(tc, i);
        auto tr = trace_attention(model, ex);
        REQUIRE(tr.doc_scores.size() == 10);
        double total = 0;
        for (double s : tr.doc_scores) {
            CHECK(s >= 0.0);
            total += s;
        }
        CHECK(total == doctest::Approx(1.0));
        CHECK(tr.golden_index == ex.golden_index);
    }
}

TEST_CASE("experiment config parses overrides and keeps defaults") {
    const char* text = R"({
        "model": {"d": 32, "heads": 4},
        "task": {"vocab_size": 128, "answer_len": 3},
        "finetune": {"learning_rate": 0.001, "epochs": 5},
        "k_list": [1, 10],
        "rho_list": [0.9],
        "seeds": [7],
        "methods": ["opamp"],
        "threads": 2
    })";
    auto cfg = experiment_config_from_json_text(text);
    CHECK(cfg.model.d == 32);
    CHECK(cfg.model.heads == 4);
    CHECK(cfg.model.layers == 2);  // default preserved
    CHECK(cfg.model.vocab_size == 128);  // forced to match the task
    CHECK(cfg.task.answer_len == 3);
    CHECK(cfg.finetune_hp.learning_rate == doctest::Approx(0.001));
    CHECK(cfg.finetune_hp.epochs == 5);
    CHECK(cfg.pretrain_hp.epochs == 12);
    CHECK(cfg.k_list == std::vector<double>{1, 10});
    CHECK(cfg.rho_list == std::vector<double>{0.9});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{7});
    CHECK(cfg.methods == std::vector<std::string>{"opamp"});
    CHECK(cfg.threads == 2);

    CHECK_THROWS(experiment_config_from_json_text("{not json"));
    CHECK_THROWS_AS(experiment_config_from_json_text(R"({"methods": ["bogus"]})").validate(),
                    std::invalid_argument);
}

TEST_CASE("config validation rejects duplicate seeds") {
    ExperimentConfig cfg;
    cfg.seeds = {3, 3};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("csv writing is escaped and byte-deterministic") {
    CHECK(report::csv_escape("plain") == "plain");
    CHECK(report::csv_escape("a,b") == "\"a,b\"");
    CHECK(report::csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    CHECK(report::format_double(0.5) == "0.500000");
    CHECK(report::format_double(-1.25) == "-1.250000");

    const auto path = (fs::temp_directory_path() / "opamp_report.csv").string();
    std::vector<std::string> header{"a", "b"};
    std::vector<std::vector<std::string>> rows{{"1", "x,y"}, {"2", "z"}};
    report::write_csv(path, header, rows);
    const auto first = read_file(path);
    report::write_csv(path, header, rows);
    CHECK(read_file(path) == first);
    CHECK(first == "a,b\n1,\"x,y\"\n2,z\n");
    fs::remove(path);
}

TEST_CASE("svg charts are well-formed and carry one element per series") {
    std::vector<report::Series> series{{"K=1", {0, 1, 2}, {0.1, 0.4, 0.6}},
                                       {"K=10", {0, 1, 2}, {0.2, 0.7, 0.9}}};
    auto svg = report::svg_line_chart("em by noise", "noise", "em", series);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("data-series=\"K=1\"") != std::string::npos);
    CHECK(svg.find("data-series=\"K=10\"") != std::string::npos);

    std::vector<report::BarGroup> groups{{"doc 0", {0.3, 0.5}}, {"doc 1", {0.7, 0.5}}};
    auto bars = report::svg_bar_chart("trace", {"before", "after"}, groups);
    CHECK(bars.rfind("<svg", 0) == 0);
    CHECK(bars.find("</svg>") != std::string::npos);
    CHECK(bars.find("doc 0") != std::string::npos);
    CHECK(bars.find("before") != std::string::npos);
}

TEST_CASE("experiment grid: metrics.csv rerun is byte-identical") {
    const auto dir = (fs::temp_directory_path() / "opamp_exp_smoke").string();
    fs::remove_all(dir);
    auto cfg = smoke_config(dir);
    auto results = run_experiment<float>(cfg);
    // lowrank(1 K slot) + opamp(2 Ks), 1 rho, 2 seeds
    REQUIRE(results.size() == 6);
    for (const auto& r : results) {
        CHECK(r.em >= 0.0);
        CHECK(r.em <= 1.0);
        CHECK(r.pm >= 0.0);
        CHECK(r.pm <= 1.0);
    }
    const auto csv = read_file(dir + "/metrics.csv");
    CHECK(csv.rfind("method,cmrr,noise_ratio,seed,em,pm\n", 0) == 0);
    // cell rows + mean/stddev per (method, K, rho) group
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6 + 3 * 2);

    fs::remove_all(dir);
    auto again = run_experiment<float>(cfg);
    CHECK(read_file(dir + "/metrics.csv") == csv);
    for (std::size_t i = 0; i < results.size(); ++i) {
        CHECK(again[i].em == results[i].em);
        CHECK(again[i].golden_after == results[i].golden_after);
    }
    fs::remove_all(dir);
}

TEST_CASE("eval-only run fails cleanly when checkpoints are absent") {
    const auto dir = (fs::temp_directory_path() / "opamp_exp_evalonly").string();
    fs::remove_all(dir);
    auto cfg = smoke_config(dir);
    cfg.eval_only = true;
    CHECK_THROWS(run_experiment<float>(cfg));
    fs::remove_all(dir);
}

TEST_CASE("mean EM helpers aggregate over seeds") {
    std::vector<CellResult> rs;
    rs.push_back({"opamp", 1.0, 0.9, 1, 0.2, 0.3, 0, 0, 0});
    rs.push_back({"opamp", 1.0, 0.9, 2, 0.4, 0.5, 0, 0, 0});
    rs.push_back({"opamp", 10.0, 0.9, 1, 0.8, 0.9, 0, 0, 0});
    rs.push_back({"lowrank-baseline", 0.0, 0.9, 1, 0.5, 0.5, 0, 0, 0});
    auto by_k = mean_em_by_k(rs, 0.9);
    CHECK(by_k.at(1.0) == doctest::Approx(0.3));
    CHECK(by_k.at(10.0) == doctest::Approx(0.8));
    CHECK(mean_em_baseline(rs, 0.9) == doctest::Approx(0.5));
}
