#pragma once

#include <stdexcept>
#include <string>

namespace femur {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad argument values (counts, bounds, sizes).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Data fails a structural invariant (bad face index, topology mismatch, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Unparseable or version-mismatched file content.
class FormatError : public Error {
public:
    using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Geometric configuration admits no solution (collinear landmarks, coplanar sphere points).
class DegenerateError : public Error {
public:
    using Error::Error;
};

// Numerical failure inside a solver.
class NumericalError : public Error {
public:
    using Error::Error;
};

// A spatial selection matched no vertices; callers decide whether this is fatal.
class EmptyRegionError : public Error {
public:
    using Error::Error;
};

} // namespace femur
