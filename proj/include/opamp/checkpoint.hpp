#pragma once

// Checkpoint format: "OPAMPCKPT" magic, integer version, a textual
// key/value header including a tensor directory (name, shape, payload
// offset), raw little-endian float32 payloads in directory order, and a
// trailing FNV-1a64 checksum of everything before it.

#include <cstring>
#include <fstream>
#include <map>

#include "opamp/model.hpp"

namespace opamp {

constexpr const char* kCheckpointMagic = "OPAMPCKPT";
constexpr int kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

template <typename S>
void save_checkpoint(Model<S>& model, const std::string& path) {
    std::ostringstream header;
    header << kCheckpointMagic << '\n';
    header << "version " << kCheckpointVersion << '\n';
    const auto& c = model.cfg;
    header << "vocab_size " << c.vocab_size << '\n'
           << "d " << c.d << '\n'
           << "heads " << c.heads << '\n'
           << "layers " << c.layers << '\n'
           << "ffn_width " << c.ffn_width << '\n'
           << "max_seq_len " << c.max_seq_len << '\n'
           << "attention_kind " << attention_kind_name(c.kind) << '\n'
           << "cmrr " << model.cmrr << '\n'
           << "adapter_dim " << model.adapter_dim << '\n'
           << "lowrank_rank " << model.lowrank_rank << '\n'
           << "lowrank_alpha " << model.lowrank_alpha << '\n'
           << "joint_lowrank " << (model.joint_lowrank ? 1 : 0) << '\n';
    if (!model.blocks.empty() && model.blocks[0].attn.adapters)
        header << "activation "
               << activation_name((*model.blocks[0].attn.adapters)[0].act) << '\n';

    std::size_t offset = 0;
    model.visit_params([&](const std::string& name, Tensor<S>& t) {
        header << "tensor " << name << ' ' << t.shape().size();
        for (int e : t.shape()) header << ' ' << e;
        header << ' ' << offset << '\n';
        offset += t.size() * sizeof(float);
    });
    header << "end_header\n";

    std::string bytes = header.str();
    bytes.reserve(bytes.size() + offset + 8);
    model.visit_params([&](const std::string&, Tensor<S>& t) {
        for (S v : t.data()) {
            const float f = static_cast<float>(v);
            char buf[4];
            std::memcpy(buf, &f, 4);
            bytes.append(buf, 4);
        }
    });
    const std::uint64_t sum = detail::fnv1a64(bytes.data(), bytes.size());
    char sb[8];
    std::memcpy(sb, &sum, 8);
    bytes.append(sb, 8);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint write failed: " + path);
}

template <typename S>
Model<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw CheckpointError("checkpoint truncated: " + path);

    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (detail::fnv1a64(bytes.data(), bytes.size() - 8) != stored)
        throw CheckpointError("checkpoint checksum mismatch: " + path);

    std::istringstream hs(bytes);
    std::string line;
    if (!std::getline(hs, line) || line != kCheckpointMagic)
        throw CheckpointError("bad checkpoint magic: " + path);

    std::map<std::string, std::string> kv;
    struct Entry {
        std::vector<int> shape;
        std::size_t offset;
    };
    std::vector<std::pair<std::string, Entry>> dir;
    std::size_t header_end = 0;
    while (std::getline(hs, line)) {
        if (line == "end_header") {
            header_end = static_cast<std::size_t>(hs.tellg());
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "tensor") {
            std::string name;
            int ndim = 0;
            ls >> name >> ndim;
            Entry e;
            for (int i = 0; i < ndim; ++i) {
                int d = 0;
                ls >> d;
                e.shape.push_back(d);
            }
            ls >> e.offset;
            if (!ls) throw CheckpointError("malformed tensor directory line: " + line);
            dir.emplace_back(name, e);
        } else {
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
            kv[key] = rest;
        }
    }
    if (header_end == 0) throw CheckpointError("checkpoint header not terminated: " + path);
    if (std::stoi(kv.at("version")) != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version: " + kv.at("version"));

    ModelConfig cfg;
    cfg.vocab_size = std::stoi(kv.at("vocab_size"));
    cfg.d = std::stoi(kv.at("d"));
    cfg.heads = std::stoi(kv.at("heads"));
    cfg.layers = std::stoi(kv.at("layers"));
    cfg.ffn_width = std::stoi(kv.at("ffn_width"));
    cfg.max_seq_len = std::stoi(kv.at("max_seq_len"));
    const auto kind = attention_kind_from_name(kv.at("attention_kind"));

    Model<S> m = build_base_model<S>(cfg, 0);
    const Activation act = kv.count("activation") ? activation_from_name(kv.at("activation"))
                                                  : Activation::Gelu;
    if (kind == AttentionKind::OpAmp)
        attach_opamp_adapters(m, std::stod(kv.at("cmrr")), std::stoi(kv.at("adapter_dim")), 0, act);
    else if (kind == AttentionKind::LowRankBaseline)
        attach_lowrank_baseline(m, std::stoi(kv.at("lowrank_rank")),
                                std::stod(kv.at("lowrank_alpha")), 0);
    if (kind == AttentionKind::OpAmp && kv.count("joint_lowrank") && kv.at("joint_lowrank") == "1")
        attach_joint_lowrank(m, std::stoi(kv.at("lowrank_rank")),
                             std::stod(kv.at("lowrank_alpha")), 0);

    std::map<std::string, Entry> lookup;
    for (auto& [name, e] : dir) lookup[name] = e;
    const std::size_t payload_base = header_end;
    const std::size_t payload_size = bytes.size() - 8 - payload_base;
    m.visit_params([&](const std::string& name, Tensor<S>& t) {
        auto it = lookup.find(name);
        if (it == lookup.end())
            throw CheckpointError("checkpoint missing tensor: " + name);
        if (it->second.shape != t.shape())
            throw CheckpointError("checkpoint shape mismatch for " + name);
        const std::size_t need = t.size() * sizeof(float);
        if (it->second.offset + need > payload_size)
            throw CheckpointError("checkpoint payload truncated at tensor " + name);
        const char* src = bytes.data() + payload_base + it->second.offset;
        for (std::size_t i = 0; i < t.size(); ++i) {
            float f;
            std::memcpy(&f, src + i * 4, 4);
            t.data()[i] = static_cast<S>(f);
        }
        lookup.erase(it);
    });
    if (!lookup.empty())
        throw CheckpointError("checkpoint has unexpected tensor: " + lookup.begin()->first);
    return m;
}

}  // namespace opamp
