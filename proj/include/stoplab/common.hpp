#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace stoplab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when an input violates a documented precondition.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Raised when a dimension falls outside the valid range for an operation.
struct DimensionError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// Raised when a numeric evaluation produced a non-finite value.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what, int coordinate = -1)
        : std::runtime_error(what), coordinate(coordinate) {}
    int coordinate;
};

/// Raised by iterative solvers that fail to reach their tolerance.
struct SolverError : std::runtime_error {
    SolverError(const std::string& what, int step, double residual)
        : std::runtime_error(what), step(step), residual(residual) {}
    int step;
    double residual;
};

/// Raised when a sample path leaves the representable range.
struct SimulationError : std::runtime_error {
    SimulationError(const std::string& what, long path, int step)
        : std::runtime_error(what), path(path), step(step) {}
    long path;
    int step;
};

} // namespace stoplab
