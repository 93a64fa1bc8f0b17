#pragma once

#include <stdexcept>
#include <string>

namespace csi {

// Base for all library errors. Subclasses distinguish caller mistakes
// (bad shapes, bad config) from runtime failures (IO, numerics).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

// Non-finite values, divergence, failed factorizations.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(what) {}
};

} // namespace csi
