#pragma once
#include <stdexcept>
#include <string>

namespace ordred {

/// Base of every error raised by the library.
class Error : public std::runtime_error
{
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const noexcept { return kind_; }
private:
    std::string kind_;
};

/// Bad input: malformed CSV, invalid config, invariant violations of inputs.
class ValidationError : public Error
{
public:
    ValidationError(std::string kind, const std::string& msg, std::string subject = {})
        : Error(std::move(kind), msg), subject_(std::move(subject)) {}
    /// Column, key or file the error refers to (may be empty).
    const std::string& subject() const noexcept { return subject_; }
private:
    std::string subject_;
};

/// Numerical failure during estimation.
class NumericalError : public Error
{
public:
    using Error::Error;
};

namespace detail {
[[noreturn]] inline void fail_validation(const char* kind, const std::string& msg,
                                         const std::string& subject = {})
{
    throw ValidationError(kind, msg, subject);
}
[[noreturn]] inline void fail_numerical(const char* kind, const std::string& msg)
{
    throw NumericalError(kind, msg);
}
} // namespace detail

} // namespace ordred
