#pragma once

#include <stdexcept>
#include <string>

namespace lmabo {

/// Invalid input to an operation (dimension mismatch, out of bounds, bad parameter).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A covariance matrix could not be factorized even after jitter escalation.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, double attempted_jitter)
        : std::runtime_error(what + " (attempted jitter " + std::to_string(attempted_jitter) + ")"),
          jitter_(attempted_jitter) {}

    double attempted_jitter() const noexcept { return jitter_; }

private:
    double jitter_;
};

class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RenderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lmabo
