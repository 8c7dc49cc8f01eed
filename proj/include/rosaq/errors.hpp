#pragma once

#include <stdexcept>

namespace rosaq {

// Caller-supplied values violate a precondition (shape, range, NaN payload).
struct validation_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// On-disk artifact is malformed or truncated.
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An iterative numerical routine failed to converge.
struct convergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace rosaq
