#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "clearsky/params.hpp"
#include "clearsky/tensor.hpp"

namespace clearsky {

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Flat checkpoint container: text manifest followed by named tensors as
/// little-endian float32, row-major, each preceded by (name length, name
/// bytes, rank, dims). Storage is float32 regardless of the compute type.
struct CheckpointData {
    uint64_t config_hash = 0;
    int64_t step = 0;
    uint64_t seed = 0;
    std::map<std::string, Tensor<float>> tensors;
};

namespace ckpt_detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw CheckpointError("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open for write: " + path);
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(data.config_hash));
    os << "CLEARSKY-CKPT v1\n"
       << "config=" << hex << "\n"
       << "step=" << data.step << "\n"
       << "seed=" << data.seed << "\n"
       << "count=" << data.tensors.size() << "\n";
    for (const auto& [name, t] : data.tensors) {
        ckpt_detail::put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        ckpt_detail::put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) ckpt_detail::put_u32(os, static_cast<uint32_t>(t.dim(i)));
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * 4));
    }
    if (!os) throw CheckpointError("write failed: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open: " + path);
    std::string line;
    std::getline(is, line);
    if (line != "CLEARSKY-CKPT v1") throw CheckpointError("bad magic in " + path);
    CheckpointData data;
    size_t count = 0;
    for (int i = 0; i < 4; ++i) {
        std::getline(is, line);
        auto eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("bad manifest line: " + line);
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "config")
            data.config_hash = std::stoull(val, nullptr, 16);
        else if (key == "step")
            data.step = std::stoll(val);
        else if (key == "seed")
            data.seed = std::stoull(val);
        else if (key == "count")
            count = std::stoull(val);
        else
            throw CheckpointError("unknown manifest key: " + key);
    }
    for (size_t e = 0; e < count; ++e) {
        uint32_t nlen = ckpt_detail::get_u32(is);
        if (nlen > 4096) throw CheckpointError("implausible name length");
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        uint32_t rank = ckpt_detail::get_u32(is);
        if (rank > 8) throw CheckpointError("implausible rank");
        Shape shape;
        for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(ckpt_detail::get_u32(is)));
        Tensor<float> t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
        if (!is) throw CheckpointError("checkpoint truncated in tensor " + name);
        data.tensors.emplace(std::move(name), std::move(t));
    }
    return data;
}

/// Pack model parameters under "param/"; optimizer state goes in by the
/// caller under "opt/".
template <class S>
void pack_params(CheckpointData& ck, const ParameterStore<S>& params) {
    for (const auto& [name, entry] : params)
        ck.tensors.emplace("param/" + name, entry.value.template cast<float>());
}

/// Restore into an initialized store (the structure defines shapes and
/// trainable flags). Missing or extra parameter entries are errors.
template <class S>
void unpack_params(const CheckpointData& ck, ParameterStore<S>& params) {
    size_t seen = 0;
    for (auto& [name, entry] : params) {
        auto it = ck.tensors.find("param/" + name);
        if (it == ck.tensors.end()) throw CheckpointError("checkpoint missing parameter " + name);
        if (it->second.shape() != entry.value.shape())
            throw CheckpointError("checkpoint shape mismatch for " + name);
        entry.value = it->second.template cast<S>();
        ++seen;
    }
    size_t param_entries = 0;
    for (const auto& [name, t] : ck.tensors)
        if (name.rfind("param/", 0) == 0) ++param_entries;
    if (param_entries != seen) throw CheckpointError("checkpoint has unknown parameter entries");
}

}  // namespace clearsky
