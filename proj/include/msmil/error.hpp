#pragma once

#include <stdexcept>
#include <string>

namespace msmil {

/// Base for every error the library raises on bad input. Anything else
/// escaping the library is a bug.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A scalar or configuration value is outside its documented domain.
class ValueError : public Error {
public:
    using Error::Error;
};

/// A file is missing, unreadable, or does not follow its schema.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace msmil
