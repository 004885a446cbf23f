#pragma once

#include <stdexcept>
#include <string>

namespace alip {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes incompatible with the requested operation.
// The message names the operation and the offending shapes.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Input outside the mathematical domain of an operation
// (log of a non-positive value, non-positive temperature, ...).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Malformed serialized data (corpus files, checkpoints, telemetry).
// Messages carry 1-based line numbers where applicable.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Failure to open, read or write a file.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace alip
