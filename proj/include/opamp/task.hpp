#pragma once

// Synthetic noisy-context retrieval task: D documents (one golden) with
// key/value structure, a query naming the golden key, and the golden
// value as the answer. A document reads [DOC] key body [SEP]; the value
// opens the body, directly after the key. Generation is a pure function
// of (seed, index).

#include <cstdint>
#include <string>
#include <vector>

namespace opamp::task {

// Token id layout. Content tokens (keys, values, filler) start at
// kFirstContent and run to vocab_size.
constexpr int kPad = 0;
constexpr int kDocMarker = 1;
constexpr int kSepMarker = 2;
constexpr int kQueryMarker = 3;
constexpr int kFirstContent = 4;

enum class GoldenPolicy { UniformRandom, FixedIndex, LateHalf, EarlyHalf };

struct TaskConfig {
    int vocab_size = 64;
    int min_filler = 2;  // filler tokens appended to each document
    int max_filler = 6;
    int answer_len = 2;  // 1..4
    double noise_ratio = 0.0;
    GoldenPolicy golden_policy = GoldenPolicy::UniformRandom;
    int fixed_golden_index = 0;
    int example_count = 256;
    std::uint64_t seed = 0;
    int max_seq_len = 512;
};

struct NoisyContextExample {
    std::vector<std::vector<int>> documents;  // each: [DOC] key [SEP] content...
    int golden_index = 0;
    std::vector<int> query;   // [Q] golden_key
    std::vector<int> answer;  // golden value tokens
    double noise_ratio = 0.0;
};

struct AssembledExample {
    std::vector<int> tokens;                    // documents ++ query ++ answer
    std::vector<std::uint8_t> answer_mask;      // set on answer positions
    std::vector<std::pair<int, int>> doc_spans; // [begin, end) per document
};

// D = round(1 / (1 - rho)); rho = 0 -> 1 document.
int document_count(double noise_ratio);

NoisyContextExample generate_example(const TaskConfig& cfg, int index);

AssembledExample assemble_tokens(const NoisyContextExample& ex);

// Scan the documents for the query key and copy the value tokens that
// follow its separator. Solves every generated example by construction.
std::vector<int> lookup_oracle(const NoisyContextExample& ex);

// Metrics. Padding (kPad) is trimmed before comparison.
int exact_match(const std::vector<int>& pred, const std::vector<int>& ref);
double partial_match(const std::vector<int>& pred, const std::vector<int>& ref);  // token F1
int accuracy(int pred_choice, int gold_choice);

// One-record-per-line JSON serialization of examples.
std::string to_json_line(const NoisyContextExample& ex);
NoisyContextExample from_json_line(const std::string& line);

}  // namespace opamp::task
