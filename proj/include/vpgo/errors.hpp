#pragma once

#include <stdexcept>
#include <string>

namespace vpgo {

// Every typed error raised by the library derives from Error so callers
// (notably the CLI) can map failures to exit codes in one place.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Requested window or index falls outside the available range.
class RangeError : public Error {
public:
    using Error::Error;
};

// File could not be read, is corrupt or does not match the declared layout.
class LoadError : public Error {
public:
    using Error::Error;
};

// File could not be written.
class WriteError : public Error {
public:
    using Error::Error;
};

// Configuration is inconsistent. `key()` names the offending entry.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

// Training diverged (NaN/Inf loss).
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace vpgo
