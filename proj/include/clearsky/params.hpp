#pragma once

#include <map>
#include <string>
#include <vector>

#include "clearsky/rng.hpp"
#include "clearsky/tensor.hpp"

namespace clearsky {

/// Named, shape-tagged collection of arrays. Trainable entries participate
/// in gradient updates; the rest are buffers (e.g. batch-norm statistics).
template <class S>
class ParameterStore {
public:
    struct Entry {
        Tensor<S> value;
        bool trainable = true;
    };

    Tensor<S>& add(const std::string& name, Tensor<S> t, bool trainable = true) {
        auto [it, fresh] = entries_.emplace(name, Entry{std::move(t), trainable});
        if (!fresh) throw ConfigError("ParameterStore: duplicate name " + name);
        return it->second.value;
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor<S>& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParameterStore: unknown name " + name);
        return it->second.value;
    }
    const Tensor<S>& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParameterStore: unknown name " + name);
        return it->second.value;
    }
    bool trainable(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ConfigError("ParameterStore: unknown name " + name);
        return it->second.trainable;
    }

    // Sorted iteration (std::map) keeps serialization and updates deterministic.
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    size_t size() const { return entries_.size(); }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : entries_)
            if (v.trainable) out.push_back(k);
        return out;
    }

    bool operator==(const ParameterStore& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        for (const auto& [k, v] : entries_) {
            auto it = o.entries_.find(k);
            if (it == o.entries_.end()) return false;
            if (it->second.trainable != v.trainable) return false;
            if (it->second.value.shape() != v.value.shape()) return false;
            if (it->second.value.vec() != v.value.vec()) return false;
        }
        return true;
    }

private:
    std::map<std::string, Entry> entries_;
};

/// Fill helpers; each parameter draws from its own name-derived stream so
/// the result is independent of initialization order.
template <class S>
Tensor<S> init_trunc_normal(uint64_t seed, const std::string& name, Shape shape, double std) {
    Rng rng = stream_rng(seed, name);
    Tensor<S> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.truncated_normal(std));
    return t;
}

template <class S>
Tensor<S> init_normal(uint64_t seed, const std::string& name, Shape shape, double std) {
    Rng rng = stream_rng(seed, name);
    Tensor<S> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal(0.0, std));
    return t;
}

}  // namespace clearsky
