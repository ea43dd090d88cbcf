#pragma once

#include <stdexcept>
#include <string>

namespace fode {

// Base class for every error this library raises on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape / dimension mismatches. Messages name the offending dimension.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid ModelConfig / FedConfig / experiment config field.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A forward op produced NaN/Inf from finite inputs, or backward was misused.
class NumericsError : public Error {
public:
    using Error::Error;
};

// Dataset files missing / malformed.
class DataError : public Error {
public:
    using Error::Error;
};

} // namespace fode
