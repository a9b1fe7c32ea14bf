#pragma once

#include <stdexcept>
#include <string>

namespace esrf {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid run configuration (incompatible grids, bad sweep parameters, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// State-space model fails validation (non-PD noise, dimension mismatch, ...).
class ModelError : public Error {
public:
    using Error::Error;
};

/// A matrix expected to be symmetric positive semidefinite is not.
class NotPsdError : public Error {
public:
    using Error::Error;
};

/// A matrix expected to be invertible is (numerically) singular.
class SingularMatrixError : public Error {
public:
    using Error::Error;
};

/// Ensemble too small or with degenerate covariance where full rank is required.
class DegenerateEnsembleError : public Error {
public:
    using Error::Error;
};

/// Mismatched vector/matrix/ensemble dimensions between arguments.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A filter or integrator state exceeded the divergence guard.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

/// File output failure.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace esrf
