#pragma once

#include <stdexcept>
#include <string>

namespace specshard {

// Raised when inputs violate a documented precondition (bad sizes, ranges,
// malformed config/CSV).  The CLI maps this to exit code 1.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an iteration fails to converge or a decomposition breaks down.
// Carries the final residual in the message.  The CLI maps this to exit code 2.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace specshard
