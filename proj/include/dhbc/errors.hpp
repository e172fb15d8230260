#pragma once

#include <stdexcept>
#include <string>

namespace dhbc {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// A covariance failed its Cholesky factorization or eigenvalue floor.
class DegenerateCovariance : public Error {
public:
    using Error::Error;
};

/// A model fit has no identifiable solution (e.g. too few subjects for the design).
class DegenerateFit : public Error {
public:
    using Error::Error;
};

/// Input violates a data contract (schema, missingness, cross-file consistency).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Every candidate for a subject has zero likelihood.
class UnassignableSubject : public Error {
public:
    using Error::Error;
};

}  // namespace dhbc
