#pragma once

#include <stdexcept>
#include <string>

namespace mpf {

/// Root of the library's exception hierarchy.
///
/// Two broad categories matter to callers: `ValidationError` (bad input,
/// caught before any numerics run) and everything else, which signals that a
/// numerical procedure failed on otherwise well-formed input.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// A value outside the domain of an operation (non-finite integrand,
/// negative density, divergent expectation).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Singular metric, collapsed family or degenerate Bayes update.
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// An operator needs derivatives that the field does not provide.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// A basis component received (numerically) zero likelihood mass.
class StarvationError : public DegenerateError {
public:
    StarvationError(const std::string& what, int component)
        : DegenerateError(what), component_(component) {}
    int component() const noexcept { return component_; }

private:
    int component_;
};

/// Mixture weights left the simplex by more than the clip tolerance.
class ManifoldExitError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Simulated state path exceeded the explosion bound.
class ExplosionError : public Error {
public:
    using Error::Error;
};

/// Engine outputs live on time grids that cannot be matched.
class AlignmentError : public Error {
public:
    using Error::Error;
};

}  // namespace mpf
