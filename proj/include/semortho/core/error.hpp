#pragma once

#include <stdexcept>
#include <string>

namespace semortho {

/// Failure classes, mapped one-to-one onto CLI exit codes.
enum class ErrorKind { validation, runtime, service };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Bad input: malformed files, out-of-range parameters, violated preconditions.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

/// Numerical or runtime failure on otherwise valid input.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::runtime, what) {}
};

/// Embedding or labeling service unreachable, unauthorized or misbehaving.
class ServiceError : public Error {
public:
    explicit ServiceError(const std::string& what) : Error(ErrorKind::service, what) {}
};

inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::validation: return 2;
    case ErrorKind::runtime: return 3;
    case ErrorKind::service: return 4;
    }
    return 3;
}

}  // namespace semortho
