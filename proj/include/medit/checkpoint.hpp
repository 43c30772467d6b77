#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "medit/error.hpp"
#include "medit/model.hpp"

namespace medit {

// Checkpoint container: magic "MEDITCKPT1", six u64 dims, the vocabulary
// listing, then named row-major little-endian float64 tensors. Round-trips
// bit-exactly.
namespace ckpt {

constexpr char kMagic[10] = {'M', 'E', 'D', 'I', 'T', 'C', 'K', 'P', 'T', '1'};

struct NamedTensor {
    std::string name;
    std::vector<uint64_t> dims;
    std::vector<double> data;
};

struct Container {
    ModelConfig config;
    std::vector<std::string> vocab_tokens;
    std::vector<NamedTensor> tensors;
};

inline void put_u64(std::string& out, uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    uint64_t u64() {
        need(8);
        uint64_t x = 0;
        for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<size_t>(i)])) << (8 * i);
        pos_ += 8;
        return x;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(size_t n) {
        if (pos_ + n > bytes_.size()) throw ConfigError("checkpoint file truncated");
    }
    std::string bytes_;
    size_t pos_ = 0;
};

inline std::string encode(const Container& c) {
    std::string out;
    out.append(kMagic, sizeof(kMagic));
    put_u64(out, static_cast<uint64_t>(c.config.n_layers));
    put_u64(out, static_cast<uint64_t>(c.config.d_model));
    put_u64(out, static_cast<uint64_t>(c.config.d_ff));
    put_u64(out, static_cast<uint64_t>(c.config.n_heads));
    put_u64(out, static_cast<uint64_t>(c.config.context));
    put_u64(out, static_cast<uint64_t>(c.config.vocab_size));
    put_u64(out, c.vocab_tokens.size());
    for (const auto& t : c.vocab_tokens) {
        put_u64(out, t.size());
        out += t;
    }
    put_u64(out, c.tensors.size());
    for (const auto& t : c.tensors) {
        put_u64(out, t.name.size());
        out += t.name;
        put_u64(out, t.dims.size());
        uint64_t count = 1;
        for (uint64_t dim : t.dims) {
            put_u64(out, dim);
            count *= dim;
        }
        if (count != t.data.size()) throw PipelineError("tensor dims disagree with payload: " + t.name);
        for (double v : t.data) put_f64(out, v);
    }
    return out;
}

inline Container decode(std::string bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ConfigError("not a checkpoint file (bad magic)");
    }
    Reader r(bytes.substr(sizeof(kMagic)));
    Container c;
    c.config.n_layers = static_cast<int>(r.u64());
    c.config.d_model = static_cast<int>(r.u64());
    c.config.d_ff = static_cast<int>(r.u64());
    c.config.n_heads = static_cast<int>(r.u64());
    c.config.context = static_cast<int>(r.u64());
    c.config.vocab_size = static_cast<int>(r.u64());
    const uint64_t n_vocab = r.u64();
    c.vocab_tokens.reserve(n_vocab);
    for (uint64_t i = 0; i < n_vocab; ++i) {
        const uint64_t len = r.u64();
        c.vocab_tokens.push_back(r.str(len));
    }
    const uint64_t n_tensors = r.u64();
    c.tensors.reserve(n_tensors);
    for (uint64_t i = 0; i < n_tensors; ++i) {
        NamedTensor t;
        const uint64_t name_len = r.u64();
        t.name = r.str(name_len);
        const uint64_t ndim = r.u64();
        uint64_t count = 1;
        for (uint64_t k = 0; k < ndim; ++k) {
            t.dims.push_back(r.u64());
            count *= t.dims.back();
        }
        t.data.resize(count);
        for (uint64_t k = 0; k < count; ++k) t.data[k] = r.f64();
        c.tensors.push_back(std::move(t));
    }
    if (!r.done()) throw ConfigError("trailing bytes in checkpoint file");
    return c;
}

}  // namespace ckpt

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw PipelineError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

inline ckpt::Container params_to_container(const TransformerParams& p) {
    ckpt::Container c;
    c.config = p.config;
    c.vocab_tokens = p.vocab.tokens();
    auto add_mat = [&c](const std::string& name, const Mat& m) {
        c.tensors.push_back({name, {m.rows, m.cols}, m.data});
    };
    auto add_vec = [&c](const std::string& name, const std::vector<double>& v) {
        c.tensors.push_back({name, {v.size()}, v});
    };
    add_mat("embed", p.embed);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const std::string pre = "layers." + std::to_string(i) + ".";
        add_mat(pre + "wq", p.layers[i].wq);
        add_mat(pre + "wk", p.layers[i].wk);
        add_mat(pre + "wv", p.layers[i].wv);
        add_mat(pre + "wo", p.layers[i].wo);
        add_mat(pre + "w_in", p.layers[i].w_in);
        add_mat(pre + "w_out", p.layers[i].w_out);
        add_vec(pre + "ln1.g", p.layers[i].ln1_g);
        add_vec(pre + "ln1.b", p.layers[i].ln1_b);
        add_vec(pre + "ln2.g", p.layers[i].ln2_g);
        add_vec(pre + "ln2.b", p.layers[i].ln2_b);
    }
    add_vec("lnf.g", p.lnf_g);
    add_vec("lnf.b", p.lnf_b);
    add_mat("unembed", p.unembed);
    return c;
}

inline TransformerParams container_to_params(const ckpt::Container& c) {
    TransformerParams p;
    p.config = c.config;
    p.vocab = Vocabulary::from_tokens(c.vocab_tokens);
    if (p.vocab.size() != c.config.vocab_size) throw ConfigError("checkpoint vocab size disagrees with header");

    size_t idx = 0;
    auto next = [&c, &idx](const std::string& name) -> const ckpt::NamedTensor& {
        if (idx >= c.tensors.size()) throw ConfigError("checkpoint missing tensor: " + name);
        const ckpt::NamedTensor& t = c.tensors[idx++];
        if (t.name != name) throw ConfigError("checkpoint tensor out of order: expected " + name + ", got " + t.name);
        return t;
    };
    auto take_mat = [&next](const std::string& name) {
        const ckpt::NamedTensor& t = next(name);
        if (t.dims.size() != 2) throw ConfigError("tensor rank mismatch: " + name);
        Mat m(t.dims[0], t.dims[1]);
        m.data = t.data;
        return m;
    };
    auto take_vec = [&next](const std::string& name) {
        const ckpt::NamedTensor& t = next(name);
        if (t.dims.size() != 1) throw ConfigError("tensor rank mismatch: " + name);
        return t.data;
    };

    p.embed = take_mat("embed");
    p.layers.resize(static_cast<size_t>(c.config.n_layers));
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const std::string pre = "layers." + std::to_string(i) + ".";
        p.layers[i].wq = take_mat(pre + "wq");
        p.layers[i].wk = take_mat(pre + "wk");
        p.layers[i].wv = take_mat(pre + "wv");
        p.layers[i].wo = take_mat(pre + "wo");
        p.layers[i].w_in = take_mat(pre + "w_in");
        p.layers[i].w_out = take_mat(pre + "w_out");
        p.layers[i].ln1_g = take_vec(pre + "ln1.g");
        p.layers[i].ln1_b = take_vec(pre + "ln1.b");
        p.layers[i].ln2_g = take_vec(pre + "ln2.g");
        p.layers[i].ln2_b = take_vec(pre + "ln2.b");
    }
    p.lnf_g = take_vec("lnf.g");
    p.lnf_b = take_vec("lnf.b");
    p.unembed = take_mat("unembed");
    return p;
}

inline void save_checkpoint(const std::string& path, const TransformerParams& p) {
    write_file(path, ckpt::encode(params_to_container(p)));
}

inline TransformerParams load_checkpoint(const std::string& path) {
    return container_to_params(ckpt::decode(read_file(path)));
}

}  // namespace medit
