#pragma once

#include <stdexcept>
#include <string>

namespace cddvt {

/// Base of every error raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand shapes disagree (rows/cols/lengths).
struct ShapeError : Error {
    using Error::Error;
};

/// A scalar argument is outside its documented domain.
struct ArgumentError : Error {
    using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
struct NumericalError : Error {
    using Error::Error;
};

/// Inconsistent hyperparameters (e.g. D not divisible by M).
struct ConfigError : Error {
    using Error::Error;
};

/// Malformed file contents. `offset` is the byte position where parsing failed.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t byte_offset)
        : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), message(what), offset(byte_offset) {}
    std::string message;
    std::size_t offset;
};

/// Filesystem failure; message carries the path.
struct IoError : Error {
    using Error::Error;
};

}  // namespace cddvt
