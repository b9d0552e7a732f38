#pragma once

#include <stdexcept>
#include <string>

namespace netpc {

/// Raised when vector/matrix/block shapes disagree with the graph layout.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Base for every failure raised by an optimization routine.
struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The KKT matrix has a (numerically) zero pivot. For fixed-terminal problems this
/// is how an unreachable target shows up.
struct SingularKktError : SolverError {
    using SolverError::SolverError;
};

struct NewtonError : SolverError {
    NewtonError(const std::string& what, double residual, int iterations)
        : SolverError(what), final_residual(residual), iterations(iterations) {}
    double final_residual;
    int iterations;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace netpc
