#pragma once

// Self-describing binary checkpoint format:
//
//   magic   "ICLUQ1\0"                      (7 bytes)
//   version u32 little-endian               (currently 1)
//   config  32-byte SHA-256 of the run config
//   tensors repeated until EOF:
//             u64 name length, name bytes,
//             u64 rank, u64 dims...,
//             f64 data, little-endian, row-major
//
// Model hyperparameters, the step counter, and the RNG root seed travel as
// meta.* tensors, so a checkpoint is loadable (and inventoriable) without any
// external configuration.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "icluq/config.hpp"
#include "icluq/trainer.hpp"

namespace icluq {

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

constexpr char kMagic[7] = {'I', 'C', 'L', 'U', 'Q', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 4);
}

inline std::uint64_t read_u64(std::istream& is, const std::string& what) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (is.gcount() != 8)
        throw FormatError("checkpoint truncated while reading " + what + " at offset " +
                          std::to_string(static_cast<long long>(is.tellg())));
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char buf[4];
    is.read(reinterpret_cast<char*>(buf), 4);
    if (is.gcount() != 4) throw FormatError("checkpoint truncated while reading " + what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
}

inline void write_named_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, static_cast<std::uint64_t>(t.rank()));
    for (auto d : t.shape()) write_u64(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
}

} // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_named_tensors(const std::string& path, const std::string& config_hash_bytes,
                               const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + path);
    os.write(detail::kMagic, 7);
    detail::write_u32(os, detail::kVersion);
    std::string hash = config_hash_bytes;
    hash.resize(32, '\0');
    os.write(hash.data(), 32);
    for (const auto& [name, t] : tensors) detail::write_named_tensor(os, name, t);
    if (!os) throw IoError("write failed: " + path);
}

struct TensorFile {
    std::string config_hash; // 32 raw bytes
    NamedTensors tensors;

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors) {
            if (n == name) return &t;
        }
        return nullptr;
    }

    const Tensor& require(const std::string& name) const {
        const Tensor* t = find(name);
        if (t == nullptr) throw FormatError("checkpoint is missing tensor '" + name + "'");
        return *t;
    }
};

inline TensorFile load_named_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[7];
    is.read(magic, 7);
    if (is.gcount() != 7 || std::memcmp(magic, detail::kMagic, 7) != 0)
        throw FormatError("bad checkpoint magic at offset 0 in " + path);
    const std::uint32_t version = detail::read_u32(is, "version");
    if (version != detail::kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    TensorFile file;
    file.config_hash.resize(32);
    is.read(file.config_hash.data(), 32);
    if (is.gcount() != 32) throw FormatError("checkpoint truncated while reading config hash");

    for (;;) {
        is.peek();
        if (is.eof()) break;
        const std::uint64_t name_len = detail::read_u64(is, "name length");
        if (name_len > 4096) throw FormatError("implausible tensor name length");
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (is.gcount() != static_cast<std::streamsize>(name_len))
            throw FormatError("checkpoint truncated while reading tensor name");
        const std::uint64_t rank = detail::read_u64(is, "rank of " + name);
        if (rank > 8) throw FormatError("implausible rank for tensor " + name);
        std::vector<std::int64_t> shape;
        std::uint64_t count = 1;
        for (std::uint64_t i = 0; i < rank; ++i) {
            const std::uint64_t d = detail::read_u64(is, "dim of " + name);
            shape.push_back(static_cast<std::int64_t>(d));
            count *= d;
        }
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (is.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
            throw FormatError("checkpoint truncated while reading data of " + name);
        file.tensors.emplace_back(std::move(name), std::move(t));
    }
    return file;
}

// Inventory (names and shapes) without needing any model configuration.
inline std::vector<std::pair<std::string, std::vector<std::int64_t>>> checkpoint_inventory(
    const std::string& path) {
    const TensorFile file = load_named_tensors(path);
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
    out.reserve(file.tensors.size());
    for (const auto& [name, t] : file.tensors) out.emplace_back(name, t.shape());
    return out;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    NamedTensors tensors;
    Tensor meta = Tensor::vector(10);
    meta[0] = static_cast<double>(ck.model.layers);
    meta[1] = static_cast<double>(ck.model.heads);
    meta[2] = static_cast<double>(ck.model.d_in);
    meta[3] = static_cast<double>(ck.model.d_embed);
    meta[4] = static_cast<double>(ck.model.d_key);
    meta[5] = static_cast<double>(ck.model.d_hidden);
    meta[6] = static_cast<double>(ck.model.window);
    meta[7] = static_cast<double>(static_cast<int>(ck.model.pos_mode));
    meta[8] = ck.model.pos_scale;
    meta[9] = static_cast<double>(ck.step);
    tensors.emplace_back("meta.model", std::move(meta));
    Tensor seed = Tensor::vector(2);
    seed[0] = static_cast<double>(ck.seed & 0xffffffffULL);
    seed[1] = static_cast<double>(ck.seed >> 32);
    tensors.emplace_back("meta.seed", std::move(seed));

    ck.params.for_each([&](const std::string& name, const Tensor& t) {
        tensors.emplace_back("param." + name, t);
    });
    std::size_t idx = 0;
    const_cast<ModelParams&>(ck.params).for_each_trainable([&](const std::string& name, Tensor&) {
        if (idx < ck.adam_m.size()) tensors.emplace_back("adam_m." + name, ck.adam_m[idx]);
        if (idx < ck.adam_v.size()) tensors.emplace_back("adam_v." + name, ck.adam_v[idx]);
        ++idx;
    });
    save_named_tensors(path, ck.config_hash, tensors);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const TensorFile file = load_named_tensors(path);
    Checkpoint ck;
    ck.config_hash = file.config_hash;
    const Tensor& meta = file.require("meta.model");
    if (meta.size() != 10) throw FormatError("meta.model must have 10 entries");
    ck.model.layers = static_cast<std::int64_t>(meta[0]);
    ck.model.heads = static_cast<std::int64_t>(meta[1]);
    ck.model.d_in = static_cast<std::int64_t>(meta[2]);
    ck.model.d_embed = static_cast<std::int64_t>(meta[3]);
    ck.model.d_key = static_cast<std::int64_t>(meta[4]);
    ck.model.d_hidden = static_cast<std::int64_t>(meta[5]);
    ck.model.window = static_cast<std::int64_t>(meta[6]);
    ck.model.pos_mode = static_cast<PosMode>(static_cast<int>(meta[7]));
    ck.model.pos_scale = meta[8];
    ck.step = static_cast<std::int64_t>(meta[9]);
    const Tensor& seed = file.require("meta.seed");
    ck.seed = static_cast<std::uint64_t>(seed[0]) |
              (static_cast<std::uint64_t>(seed[1]) << 32);

    Rng dummy(0, "shape", 0);
    ck.params = init_params(ck.model, dummy, "zero");
    ck.params.for_each([&](const std::string& name, Tensor& t) {
        const Tensor& src = file.require("param." + name);
        if (!(src.shape() == t.shape()))
            throw FormatError("shape mismatch for " + name + ": file " + src.shape_str());
        t = src;
    });
    ck.params.for_each_trainable([&](const std::string& name, Tensor& t) {
        const Tensor* m = file.find("adam_m." + name);
        const Tensor* v = file.find("adam_v." + name);
        ck.adam_m.push_back(m != nullptr ? *m : Tensor(t.shape()));
        ck.adam_v.push_back(v != nullptr ? *v : Tensor(t.shape()));
    });
    return ck;
}

} // namespace icluq
