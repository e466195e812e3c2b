#pragma once

#include <stdexcept>
#include <string>

namespace hlsv {

// Invalid user input: parameters, grids, config keys. Maps to exit code 2.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Numerical breakdown during a computation (non-finite state, quadrature
// failure, irreparable arbitrage). Maps to exit code 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File system failures. Maps to exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what)
{
    if (!cond) throw ConfigError(what);
}

} // namespace detail
} // namespace hlsv
