#pragma once

#include <cstring>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mks2/tensor.hpp"

namespace mks2 {

// Minimal glob: '*' matches any (possibly empty) substring.
inline bool glob_match(std::string_view pattern, std::string_view s) {
    if (pattern.empty()) return s.empty();
    if (pattern[0] == '*') {
        for (size_t i = 0; i <= s.size(); ++i)
            if (glob_match(pattern.substr(1), s.substr(i))) return true;
        return false;
    }
    if (s.empty() || pattern[0] != s[0]) return false;
    return glob_match(pattern.substr(1), s.substr(1));
}

struct ParamEntry {
    Tensor tensor;
    bool trainable = false;
};

// Named tensor table; the single source of truth for freezing contracts.
// The name set is immutable after finalize(); per-stage trainability is
// toggled via set_trainable, and optimizers consult only that flag.
class ParamStore {
public:
    Tensor& register_param(const std::string& name, Tensor t) {
        if (finalized_) throw contract_error("param store: registration after finalize: " + name);
        auto [it, inserted] = entries_.emplace(name, ParamEntry{std::move(t), false});
        if (!inserted) throw contract_error("param store: duplicate name: " + name);
        return it->second.tensor;
    }

    void finalize() { finalized_ = true; }
    bool finalized() const { return finalized_; }

    bool contains(const std::string& name) const { return entries_.count(name) > 0; }

    Tensor& at(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw contract_error("param store: unknown name: " + name);
        return it->second.tensor;
    }
    const Tensor& at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw contract_error("param store: unknown name: " + name);
        return it->second.tensor;
    }

    bool trainable(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw contract_error("param store: unknown name: " + name);
        return it->second.trainable;
    }

    void freeze_all() {
        for (auto& [name, e] : entries_) e.trainable = false;
    }

    // Marks exactly the entries matching any pattern as trainable,
    // freezing everything else.
    void set_trainable(const std::vector<std::string>& patterns) {
        for (auto& [name, e] : entries_) {
            e.trainable = false;
            for (const auto& p : patterns) {
                if (glob_match(p, name)) {
                    e.trainable = true;
                    break;
                }
            }
        }
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, e] : entries_) out.push_back(name);
        return out;
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [name, e] : entries_)
            if (e.trainable) out.push_back(name);
        return out;
    }

    void zero_grads() {
        for (auto& [name, e] : entries_) e.tensor.zero_grad();
    }

    // Graph leaves require grad only when trainable, so backward skips
    // frozen subtrees entirely.
    void sync_requires_grad() {
        for (auto& [name, e] : entries_) e.tensor.node().requires_grad = e.trainable;
    }

    int64_t total_numel() const {
        int64_t n = 0;
        for (const auto& [name, e] : entries_) n += e.tensor.numel();
        return n;
    }

    std::vector<uint8_t> tensor_bytes(const std::string& name) const {
        const Tensor& t = at(name);
        std::vector<uint8_t> out(t.vec().size() * sizeof(float));
        std::memcpy(out.data(), t.data(), out.size());
        return out;
    }

    uint64_t tensor_hash(const std::string& name) const {
        const Tensor& t = at(name);
        return fnv1a(t.data(), t.vec().size() * sizeof(float));
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    size_t size() const { return entries_.size(); }

private:
    std::map<std::string, ParamEntry> entries_;
    bool finalized_ = false;
};

} // namespace mks2
