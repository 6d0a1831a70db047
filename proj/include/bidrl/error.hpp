#pragma once

#include <stdexcept>
#include <string>

namespace bidrl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A configuration (campaign, noise spec, training profile) failed validation.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (shape mismatch, stepping a finished episode).
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// A persisted artifact could not be read. `field()` names the part of the file that failed.
class LoadError : public Error {
public:
    LoadError(std::string field, const std::string& what)
        : Error("load error [" + field + "]: " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Numerical failure during training (non-finite loss, policy scale out of range).
class TrainingFault : public Error {
public:
    TrainingFault(const std::string& what, std::string last_good_checkpoint = {})
        : Error(what), last_good_(std::move(last_good_checkpoint)) {}

    const std::string& last_good_checkpoint() const noexcept { return last_good_; }

private:
    std::string last_good_;
};

}  // namespace bidrl
