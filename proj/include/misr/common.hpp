#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace misr {

// Error taxonomy used across the library. The CLI maps these onto exit codes:
// verification failure -> 1, usage/config -> 2, data/ingestion -> 3.
struct DimError : std::runtime_error {
    explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

inline void require_dims(bool cond, const std::string& msg) {
    if (!cond) throw DimError(msg);
}

}  // namespace misr
