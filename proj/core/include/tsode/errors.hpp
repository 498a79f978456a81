#pragma once

#include <stdexcept>
#include <string>

namespace tsode {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible for the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input data violates a documented precondition (bad mask, decreasing
/// timestamps, malformed file, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// An API contract was broken by the caller (non-scalar loss, mismatched
/// grid, wrong state length).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Numerical state became non-finite during integration or training.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// A metric is undefined for the given input (e.g. AUC with one class).
class MetricError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration (CLI or config file).
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace tsode
