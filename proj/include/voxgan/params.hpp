#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "voxgan/prng.hpp"
#include "voxgan/tensor.hpp"

namespace voxgan {

/// 64-bit FNV-1a; stable across platforms, used to key per-parameter init streams.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Named parameter set. Ordered by name, so iteration (and serialization) is deterministic.
class ModelParams {
public:
    using Map = std::map<std::string, Tensor>;

    void add(const std::string& name, Tensor t) {
        if (!entries_.emplace(name, std::move(t)).second)
            throw std::invalid_argument("duplicate parameter name: " + name);
    }

    void set(const std::string& name, Tensor t) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
        if (it->second.shape() != t.shape()) throw ShapeError("set " + name, it->second.shape(), t.shape());
        it->second = std::move(t);
    }

    const Tensor& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::out_of_range("missing parameter: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }
    std::size_t size() const { return entries_.size(); }
    const Map& entries() const { return entries_; }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::vector<std::string> names_with_prefix(std::string_view prefix) const {
        std::vector<std::string> out;
        for (const auto& [name, t] : entries_)
            if (name.starts_with(prefix)) out.push_back(name);
        return out;
    }

    /// Copy in which every parameter whose name starts with one of `prefixes` is watched on `tape`.
    ModelParams watched(Tape& tape, const std::vector<std::string>& prefixes) const {
        ModelParams out;
        for (const auto& [name, t] : entries_) {
            bool hit = false;
            for (const auto& p : prefixes) hit = hit || name.starts_with(p);
            out.entries_.emplace(name, hit ? tape.watch(t.detached()) : t.detached());
        }
        return out;
    }

    bool all_finite() const {
        for (const auto& [name, t] : entries_)
            for (double v : t.data())
                if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const ModelParams& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        for (auto a = entries_.begin(), b = o.entries_.begin(); a != entries_.end(); ++a, ++b) {
            if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
            auto da = a->second.data(), db = b->second.data();
            if (!std::equal(da.begin(), da.end(), db.begin())) return false;
        }
        return true;
    }

private:
    Map entries_;
};

/// He-style normal init with std sqrt(2 / fan_in); the stream depends only on (seed, name).
inline Tensor init_weight(std::uint64_t seed, const std::string& name, Shape shape, std::size_t fan_in) {
    Prng prng(derive_seed(seed, fnv1a(name)));
    Tensor t = sample_normal(prng, shape);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.mutable_data()) v *= std_dev;
    return t;
}

}  // namespace voxgan
