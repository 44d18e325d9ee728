#include "opamp/task.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "opamp/tensor.hpp"  // uniform01, require

namespace opamp::task {

namespace {

// Independent stream per (seed, index) so batch generation and
// one-at-a-time generation agree.
std::mt19937_64 example_rng(std::uint64_t seed, int index) {
    std::mt19937_64 r(seed ^ (0x9e3779b97f4a7c15ULL *
                              (static_cast<std::uint64_t>(index) + 1)));
    r.discard(8);
    return r;
}

int rand_range(std::mt19937_64& rng, int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform01(rng) * (hi - lo + 1));
}

}  // namespace

int document_count(double noise_ratio) {
    require(noise_ratio >= 0.0 && noise_ratio < 1.0, "noise ratio must lie in [0,1)");
    return static_cast<int>(std::lround(1.0 / (1.0 - noise_ratio)));
}

NoisyContextExample generate_example(const TaskConfig& cfg, int index) {
    require(cfg.answer_len >= 1 && cfg.answer_len <= 4, "answer length must be 1..4");
    require(cfg.min_filler >= 0 && cfg.max_filler >= cfg.min_filler, "bad filler range");
    const int docs = document_count(cfg.noise_ratio);
    const int content = cfg.vocab_size - kFirstContent;
    require(content >= docs + cfg.answer_len, "vocabulary too small for document count");

    auto rng = example_rng(cfg.seed, index);

    // Pairwise distinct keys via a partial Fisher-Yates draw.
    std::vector<int> pool(content);
    for (int i = 0; i < content; ++i) pool[i] = kFirstContent + i;
    std::vector<int> keys(docs);
    for (int i = 0; i < docs; ++i) {
        const int j = rand_range(rng, i, content - 1);
        std::swap(pool[i], pool[j]);
        keys[i] = pool[i];
    }

    NoisyContextExample ex;
    ex.noise_ratio = cfg.noise_ratio;
    switch (cfg.golden_policy) {
        case GoldenPolicy::FixedIndex:
            ex.golden_index = cfg.fixed_golden_index;
            break;
        case GoldenPolicy::LateHalf:
            // Uniform over the later half of the context; used to train
            // recency-biased readers.
            ex.golden_index = rand_range(rng, docs / 2, docs - 1);
            break;
        case GoldenPolicy::EarlyHalf:
            // Uniform over the earlier half; isolates the positions a
            // recency-biased reader gets wrong.
            ex.golden_index = rand_range(rng, 0, std::max(0, docs / 2 - 1));
            break;
        case GoldenPolicy::UniformRandom:
            ex.golden_index = rand_range(rng, 0, docs - 1);
            break;
    }
    require(ex.golden_index >= 0 && ex.golden_index < docs, "golden index out of range");

    int noise_seen = 0;
    for (int di = 0; di < docs; ++di) {
        std::vector<int> doc{kDocMarker, keys[di]};
        const bool golden = di == ex.golden_index;
        // Noise documents alternate between key/value structure with a
        // non-query key ("relevant") and pure filler ("irrelevant").
        const bool relevant = golden || (noise_seen++ % 2 == 0);
        // Relevant noise keeps the key/value shape of the golden
        // document; irrelevant noise is filler throughout. Body tokens
        // never collide with a key, so no noise document can contain the
        // query key.
        const int extra = relevant ? rand_range(rng, cfg.min_filler, cfg.max_filler)
                                   : cfg.answer_len +
                                         rand_range(rng, cfg.min_filler, cfg.max_filler);
        const int body = relevant ? cfg.answer_len + extra : extra;
        for (int t = 0; t < body; ++t) {
            int tok = kFirstContent + static_cast<int>(uniform01(rng) * content);
            while (std::find(keys.begin(), keys.end(), tok) != keys.end())
                tok = kFirstContent + static_cast<int>(uniform01(rng) * content);
            doc.push_back(tok);
        }
        doc.push_back(kSepMarker);
        if (golden)
            ex.answer.assign(doc.begin() + 2, doc.begin() + 2 + cfg.answer_len);
        ex.documents.push_back(std::move(doc));
    }
    ex.query = {kQueryMarker, keys[ex.golden_index]};

    std::size_t total = ex.query.size() + ex.answer.size();
    for (const auto& d : ex.documents) total += d.size();
    if (total > static_cast<std::size_t>(cfg.max_seq_len))
        throw std::invalid_argument("example length " + std::to_string(total) +
                                    " exceeds sequence budget " +
                                    std::to_string(cfg.max_seq_len));
    return ex;
}

AssembledExample assemble_tokens(const NoisyContextExample& ex) {
    AssembledExample out;
    for (const auto& d : ex.documents) {
        const int begin = static_cast<int>(out.tokens.size());
        out.tokens.insert(out.tokens.end(), d.begin(), d.end());
        out.doc_spans.emplace_back(begin, static_cast<int>(out.tokens.size()));
    }
    out.tokens.insert(out.tokens.end(), ex.query.begin(), ex.query.end());
    out.answer_mask.assign(out.tokens.size(), 0);
    for (int t : ex.answer) {
        out.tokens.push_back(t);
        out.answer_mask.push_back(1);
    }
    return out;
}

std::vector<int> lookup_oracle(const NoisyContextExample& ex) {
    require(ex.query.size() == 2 && ex.query[0] == kQueryMarker, "malformed query");
    const int key = ex.query[1];
    for (const auto& d : ex.documents) {
        if (d.size() >= 3 && d[1] == key) {
            const std::size_t n = ex.answer.size();
            return {d.begin() + 2, d.begin() + 2 + static_cast<long>(n)};
        }
    }
    throw std::runtime_error("lookup oracle: query key not found in any document");
}

namespace {
std::vector<int> trim_pad(const std::vector<int>& s) {
    std::vector<int> out;
    for (int t : s)
        if (t != kPad) out.push_back(t);
    return out;
}
}  // namespace

int exact_match(const std::vector<int>& pred, const std::vector<int>& ref) {
    return trim_pad(pred) == trim_pad(ref) ? 1 : 0;
}

double partial_match(const std::vector<int>& pred, const std::vector<int>& ref) {
    const auto p = trim_pad(pred);
    const auto r = trim_pad(ref);
    if (p.empty() && r.empty()) return 1.0;
    if (p.empty() || r.empty()) return 0.0;
    std::map<int, int> want;
    for (int t : r) ++want[t];
    int overlap = 0;
    for (int t : p) {
        auto it = want.find(t);
        if (it != want.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / p.size();
    const double recall = static_cast<double>(overlap) / r.size();
    return 2.0 * precision * recall / (precision + recall);
}

int accuracy(int pred_choice, int gold_choice) { return pred_choice == gold_choice ? 1 : 0; }

std::string to_json_line(const NoisyContextExample& ex) {
    nlohmann::json j;
    j["documents"] = ex.documents;
    j["golden_index"] = ex.golden_index;
    j["query"] = ex.query;
    j["answer"] = ex.answer;
    j["noise_ratio"] = ex.noise_ratio;
    return j.dump();
}

NoisyContextExample from_json_line(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    NoisyContextExample ex;
    ex.documents = j.at("documents").get<std::vector<std::vector<int>>>();
    ex.golden_index = j.at("golden_index").get<int>();
    ex.query = j.at("query").get<std::vector<int>>();
    ex.answer = j.at("answer").get<std::vector<int>>();
    ex.noise_ratio = j.at("noise_ratio").get<double>();
    return ex;
}

}  // namespace opamp::task
