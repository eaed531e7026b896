#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qsd {

// Shape disagreement between operands.
struct DimensionMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Input operator fails the Hermiticity precondition.
struct NotHermitian : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Iterative eigensolver did not converge.
struct ConvergenceFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Normalized expectation requested for a numerically null state.
struct ZeroNorm : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Trajectory left its admissible norm window or became non-finite.
struct Diverged : std::runtime_error {
    Diverged(std::uint64_t trajectory_, double time_)
        : std::runtime_error("trajectory " + std::to_string(trajectory_) +
                             " diverged at t = " + std::to_string(time_)),
          trajectory(trajectory_), time(time_) {}
    std::uint64_t trajectory;
    double time;
};

// Invalid or inconsistent run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Monte-Carlo noise too large for the requested statement (e.g. slope fit).
struct InsufficientPrecision : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace qsd
