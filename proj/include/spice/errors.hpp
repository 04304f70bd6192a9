#pragma once

#include <stdexcept>
#include <string>

namespace spice {

// Bad user input: malformed files, inconsistent config, dangling indices.
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during estimation (singular posterior precision,
// non-finite targets after retries, ...). CLI exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spice
