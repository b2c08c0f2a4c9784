// Exception hierarchy shared by all rtag modules.
#pragma once

#include <stdexcept>
#include <string>

namespace rtag {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the documented domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Field evaluation too close to a current filament.
class SingularityError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent configuration (scene, registry, mapping).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Requested frequency cannot be reached by the tuning ladder.
class RangeError : public Error {
public:
    RangeError(const std::string& what, double nearest_hz)
        : Error(what), nearest_hz_(nearest_hz) {}
    double nearest_hz() const noexcept { return nearest_hz_; }

private:
    double nearest_hz_;
};

/// Hardware-model fault, e.g. an oscillator that produced no cycles.
class FaultError : public Error {
public:
    using Error::Error;
};

/// Observation too weak to estimate from (absent signal, zero triad sum).
class SignalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace rtag
