#pragma once

#include <stdexcept>
#include <string>

namespace geoprobe {

// Bad user configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (CLI exit code 3).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A request that cannot be satisfied by the given population, e.g. a sample
// larger than the eligible pool. The sweep runner records these as infeasible
// cells instead of aborting.
struct InfeasibleError : std::runtime_error {
    explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace geoprobe
