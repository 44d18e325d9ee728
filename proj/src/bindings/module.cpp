// Python bindings for the core operations: circuit gains, task
// generation, model building/adaptation, training, evaluation, and
// attention tracing. Models are float32.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "opamp/circuit.hpp"
#include "opamp/experiment.hpp"

namespace py = pybind11;
using namespace opamp;

namespace {

using PyModel = Model<float>;

task::TaskConfig make_task_config(int vocab_size, double noise_ratio, int answer_len,
                                  int min_filler, int max_filler, std::uint64_t seed,
                                  const std::string& golden_policy, int fixed_golden_index,
                                  int max_seq_len) {
    task::TaskConfig tc;
    tc.vocab_size = vocab_size;
    tc.noise_ratio = noise_ratio;
    tc.answer_len = answer_len;
    tc.min_filler = min_filler;
    tc.max_filler = max_filler;
    tc.seed = seed;
    tc.max_seq_len = max_seq_len;
    tc.fixed_golden_index = fixed_golden_index;
    if (golden_policy == "uniform-random")
        tc.golden_policy = task::GoldenPolicy::UniformRandom;
    else if (golden_policy == "fixed-index")
        tc.golden_policy = task::GoldenPolicy::FixedIndex;
    else if (golden_policy == "late-half")
        tc.golden_policy = task::GoldenPolicy::LateHalf;
    else if (golden_policy == "early-half")
        tc.golden_policy = task::GoldenPolicy::EarlyHalf;
    else
        throw std::invalid_argument("unknown golden_policy: " + golden_policy);
    return tc;
}

py::dict example_to_dict(const task::NoisyContextExample& ex) {
    py::dict d;
    d["documents"] = ex.documents;
    d["query"] = ex.query;
    d["answer"] = ex.answer;
    d["golden_index"] = ex.golden_index;
    d["noise_ratio"] = ex.noise_ratio;
    return d;
}

task::NoisyContextExample example_from_dict(const py::dict& d) {
    task::NoisyContextExample ex;
    ex.documents = d["documents"].cast<std::vector<std::vector<int>>>();
    ex.query = d["query"].cast<std::vector<int>>();
    ex.answer = d["answer"].cast<std::vector<int>>();
    ex.golden_index = d["golden_index"].cast<int>();
    if (d.contains("noise_ratio")) ex.noise_ratio = d["noise_ratio"].cast<double>();
    return ex;
}

TrainingHyperparams make_hp(double learning_rate, int epochs, int batch_size,
                            double warmup_ratio, double weight_decay, std::uint64_t seed) {
    TrainingHyperparams hp;
    hp.learning_rate = learning_rate;
    hp.epochs = epochs;
    hp.batch_size = batch_size;
    hp.warmup_ratio = warmup_ratio;
    hp.weight_decay = weight_decay;
    hp.seed = seed;
    return hp;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Adapter-based differential attention denoising, C++ core";

    // --- circuit ---
    m.def(
        "gains_from_resistors",
        [](double r1, double r2, double r3, double r4) {
            auto g = circuit::gains_from_resistors({r1, r2, r3, r4});
            return py::make_tuple(g.differential, g.common_mode, g.cmrr);
        },
        py::arg("r1"), py::arg("r2"), py::arg("r3"), py::arg("r4"),
        "Amplifier gains (differential, common_mode, cmrr) of a four-resistor network");
    m.def(
        "opamp_output",
        [](double v_plus, double v_minus, double differential, double common_mode) {
            return circuit::opamp_output(v_plus, v_minus,
                                         circuit::make_gains(differential, common_mode));
        },
        py::arg("v_plus"), py::arg("v_minus"), py::arg("differential"), py::arg("common_mode"));

    // --- task ---
    m.def("document_count", &task::document_count, py::arg("noise_ratio"));
    m.def(
        "generate_example",
        [](int index, int vocab_size, double noise_ratio, int answer_len, int min_filler,
           int max_filler, std::uint64_t seed, const std::string& golden_policy,
           int fixed_golden_index, int max_seq_len) {
            return example_to_dict(task::generate_example(
                make_task_config(vocab_size, noise_ratio, answer_len, min_filler, max_filler,
                                 seed, golden_policy, fixed_golden_index, max_seq_len),
                index));
        },
        py::arg("index"), py::arg("vocab_size") = 64, py::arg("noise_ratio") = 0.0,
        py::arg("answer_len") = 2, py::arg("min_filler") = 2, py::arg("max_filler") = 6,
        py::arg("seed") = 1, py::arg("golden_policy") = "uniform-random",
        py::arg("fixed_golden_index") = 0, py::arg("max_seq_len") = 512);
    m.def(
        "assemble_tokens",
        [](const py::dict& ex) {
            auto a = task::assemble_tokens(example_from_dict(ex));
            py::dict d;
            d["tokens"] = a.tokens;
            d["answer_mask"] = a.answer_mask;
            d["doc_spans"] = a.doc_spans;
            return d;
        },
        py::arg("example"));
    m.def(
        "lookup_oracle",
        [](const py::dict& ex) { return task::lookup_oracle(example_from_dict(ex)); },
        py::arg("example"));
    m.def("exact_match", &task::exact_match, py::arg("prediction"), py::arg("reference"));
    m.def("partial_match", &task::partial_match, py::arg("prediction"), py::arg("reference"));

    // --- model ---
    py::class_<PyModel>(m, "Model")
        .def_property_readonly("vocab_size", [](const PyModel& m_) { return m_.cfg.vocab_size; })
        .def_property_readonly("width", [](const PyModel& m_) { return m_.cfg.d; })
        .def_property_readonly("heads", [](const PyModel& m_) { return m_.cfg.heads; })
        .def_property_readonly("layers", [](const PyModel& m_) { return m_.cfg.layers; })
        .def_property_readonly("kind",
                               [](const PyModel& m_) { return attention_kind_name(m_.cfg.kind); })
        .def_property_readonly("cmrr", [](const PyModel& m_) { return m_.cmrr; })
        .def("param_count", [](PyModel& m_) { return m_.param_count(); })
        .def("trainable_param_count", [](PyModel& m_) { return m_.trainable_param_count(); })
        .def(
            "forward",
            [](const PyModel& m_, const std::vector<int>& ids) {
                auto logits = m_.forward(ids);
                std::vector<std::vector<float>> out(logits.rows(),
                                                    std::vector<float>(logits.cols()));
                for (int i = 0; i < logits.rows(); ++i)
                    for (int j = 0; j < logits.cols(); ++j) out[i][j] = logits.at(i, j);
                return out;
            },
            py::arg("ids"), "Logits for one token sequence, row per position")
        .def(
            "greedy_decode",
            [](const PyModel& m_, const std::vector<int>& context, int n_tokens) {
                return greedy_decode(m_, context, n_tokens);
            },
            py::arg("context"), py::arg("n_tokens"));

    m.def(
        "build_base_model",
        [](int vocab_size, int width, int heads, int layers, int ffn_width, int max_seq_len,
           std::uint64_t seed) {
            ModelConfig cfg;
            cfg.vocab_size = vocab_size;
            cfg.d = width;
            cfg.heads = heads;
            cfg.layers = layers;
            cfg.ffn_width = ffn_width;
            cfg.max_seq_len = max_seq_len;
            return build_base_model<float>(cfg, seed);
        },
        py::arg("vocab_size") = 64, py::arg("width") = 64, py::arg("heads") = 4,
        py::arg("layers") = 2, py::arg("ffn_width") = 256, py::arg("max_seq_len") = 512,
        py::arg("seed") = 1);
    py::enum_<Activation>(m, "Activation")
        .value("gelu", Activation::Gelu)
        .value("relu", Activation::Relu)
        .value("tanh", Activation::Tanh);
    m.def("attach_opamp_adapters", &attach_opamp_adapters<float>, py::arg("model"),
          py::arg("cmrr"), py::arg("adapter_dim"), py::arg("seed"),
          py::arg("activation") = Activation::Gelu);
    m.def(
        "attach_lowrank_baseline",
        [](PyModel& m_, int r, double alpha, std::uint64_t seed) {
            attach_lowrank_baseline(m_, r, alpha, seed);
        },
        py::arg("model"), py::arg("rank"), py::arg("alpha"), py::arg("seed"));

    // --- training / evaluation ---
    m.def(
        "pretrain",
        [](PyModel& m_, const std::vector<std::vector<int>>& corpus, double learning_rate,
           int epochs, int batch_size, double warmup_ratio, double weight_decay,
           std::uint64_t seed) {
            return pretrain(m_, corpus,
                            make_hp(learning_rate, epochs, batch_size, warmup_ratio,
                                    weight_decay, seed))
                .losses;
        },
        py::arg("model"), py::arg("corpus"), py::arg("learning_rate") = 3e-3,
        py::arg("epochs") = 1, py::arg("batch_size") = 8, py::arg("warmup_ratio") = 0.03,
        py::arg("weight_decay") = 0.0, py::arg("seed") = 1);
    m.def(
        "finetune",
        [](PyModel& m_, const std::vector<py::dict>& examples, double learning_rate, int epochs,
           int batch_size, double warmup_ratio, double weight_decay, std::uint64_t seed) {
            std::vector<task::AssembledExample> data;
            for (const auto& d : examples)
                data.push_back(task::assemble_tokens(example_from_dict(d)));
            return finetune(m_, data,
                            make_hp(learning_rate, epochs, batch_size, warmup_ratio,
                                    weight_decay, seed))
                .losses;
        },
        py::arg("model"), py::arg("examples"), py::arg("learning_rate") = 3e-3,
        py::arg("epochs") = 1, py::arg("batch_size") = 8, py::arg("warmup_ratio") = 0.03,
        py::arg("weight_decay") = 0.0, py::arg("seed") = 1);
    m.def(
        "evaluate",
        [](const PyModel& m_, const std::vector<py::dict>& examples) {
            std::vector<task::NoisyContextExample> ev;
            for (const auto& d : examples) ev.push_back(example_from_dict(d));
            auto r = evaluate(m_, ev);
            return py::make_tuple(r.em, r.pm);
        },
        py::arg("model"), py::arg("examples"), "Returns (exact_match, partial_match) means");
    m.def(
        "trace_attention",
        [](const PyModel& m_, const py::dict& ex, int layer) {
            auto t = trace_attention(m_, example_from_dict(ex), layer);
            return py::make_tuple(t.doc_scores, t.golden_index);
        },
        py::arg("model"), py::arg("example"), py::arg("layer") = -1,
        "Normalized per-document attention scores and the golden index");

    // --- checkpoints ---
    m.def("save_checkpoint", &save_checkpoint<float>, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &load_checkpoint<float>, py::arg("path"));

    py::register_exception<CheckpointError>(m, "CheckpointError");
}
