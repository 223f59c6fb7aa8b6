#pragma once

#include <stdexcept>
#include <string>

namespace psfh {

// Invalid user-supplied configuration or arguments (CLI exit code 2).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numerical breakdown at runtime (CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace psfh
