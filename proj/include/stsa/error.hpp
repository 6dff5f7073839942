#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace stsa {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible shapes or extents.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid architectural or run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A map whose standard deviation is zero where a non-constant map is required.
class DegenerateMapError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or a failed numerical check.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
          detail_(what),
          offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }
    /// Message without the offset suffix.
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string detail_;
    std::size_t offset_;
};

/// Malformed text input. Carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), detail_(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }
    /// Message without the line prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string detail_;
    std::size_t line_;
};

/// File system failure; the message always names the path.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace stsa
