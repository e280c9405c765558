#pragma once

#include <stdexcept>
#include <string>

namespace s3im {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

/// Misuse of the differentiation tape (non-scalar root, second backward, ...).
class TapeError : public Error {
public:
    using Error::Error;
};

/// Invalid user configuration. The CLI maps this onto exit code 2.
class ConfigError : public Error {
public:
    ConfigError(std::string flag, const std::string& message)
        : Error(message), flag_(std::move(flag)) {}

    const std::string& flag() const { return flag_; }

private:
    std::string flag_;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace s3im
