#pragma once

#include <stdexcept>
#include <string>

namespace spde {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shapes or grids that do not match.
class StructuralError : public Error {
public:
    using Error::Error;
};

// Non-finite values or a blown-up computation.
class NumericError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

// Time not an integer multiple of the grid spacing.
class AlignmentError : public Error {
public:
    using Error::Error;
};

class CoercivityError : public Error {
public:
    using Error::Error;
};

class RegularityError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace spde
