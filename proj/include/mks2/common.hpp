#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mks2 {

// Error taxonomy. Everything derives from mks2::error so callers can catch
// the whole family; the CLI maps contract_error to a distinct exit code.
struct error : std::runtime_error {
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not satisfy an operation's preconditions.
struct shape_error : error {
    explicit shape_error(const std::string& msg) : error(msg) {}
};

// A NaN/Inf appeared, or a loss/metric is undefined for the given inputs.
struct numeric_error : error {
    explicit numeric_error(const std::string& msg) : error(msg) {}
};

// Degenerate inputs (zero-norm vectors, empty batches, empty targets).
struct degenerate_error : error {
    explicit degenerate_error(const std::string& msg) : error(msg) {}
};

// A training/freezing/optimizer contract was violated.
struct contract_error : error {
    explicit contract_error(const std::string& msg) : error(msg) {}
};

// Malformed persisted data (record files, config files).
struct parse_error : error {
    explicit parse_error(const std::string& msg) : error(msg) {}
};

// Filesystem-level failures.
struct io_error : error {
    explicit io_error(const std::string& msg) : error(msg) {}
};

// Invalid or inconsistent configuration.
struct config_error : error {
    explicit config_error(const std::string& msg) : error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw error(msg);
}

// FNV-1a, used for config hashing and freeze-contract byte hashes.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 1469598103934665603ull) {
    return fnv1a(s.data(), s.size(), h);
}

} // namespace mks2
