#pragma once

#include <stdexcept>
#include <string>

namespace mtta {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad command-line or API usage (mismatched sizes, invalid parameters).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent model input.
class ModelError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: broken contraction, size caps, rank explosion, ...
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace mtta
