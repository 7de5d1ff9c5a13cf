#pragma once

#include <stdexcept>
#include <string>

namespace bgnn {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Operand shapes are incompatible. Message names the operation and both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value left the numeric domain an operation requires (non-finite loss,
/// activation argument outside the invertible range, empty graph, ...).
class NumericError : public Error {
public:
    using Error::Error;
};

/// A dataset file could not be parsed. Message carries file and line number.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: unknown name, out-of-range value, missing field.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Training aborted (non-finite loss). Message includes diagnostics.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace bgnn
