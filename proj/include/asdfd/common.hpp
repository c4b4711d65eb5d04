#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace asdfd {

// Error taxonomy shared across modules. Callers that care about the class of
// failure catch these; everything derives from std::exception.
struct shape_error : std::invalid_argument {
    explicit shape_error(const std::string& msg) : std::invalid_argument(msg) {}
};

struct precondition_error : std::logic_error {
    explicit precondition_error(const std::string& msg) : std::logic_error(msg) {}
};

struct degenerate_input_error : std::runtime_error {
    explicit degenerate_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct parse_error : std::runtime_error {
    explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a over raw bytes. Used for parameter checksums and config hashes where
// bit-exact identity is the contract, not cryptographic strength.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 1469598103934665603ull) {
    return fnv1a(s.data(), s.size(), h);
}

}  // namespace asdfd
