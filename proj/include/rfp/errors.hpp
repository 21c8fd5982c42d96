#pragma once

#include <stdexcept>
#include <string>

namespace rfp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments, configs or preconditions. The CLI maps these to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures. The CLI maps these to exit code 2.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (RVOL, CSV, model JSON).
class FormatError : public IoError {
public:
    using IoError::IoError;
};

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw ValidationError(msg);
}

} // namespace rfp
