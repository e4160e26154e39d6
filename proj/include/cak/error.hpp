#pragma once

#include <stdexcept>
#include <string>

namespace cak {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or dimensions that do not fit an operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// An attention or network configuration that violates its invariants.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Loss or gradient went non-finite during training.
class NumericalError : public Error {
public:
    using Error::Error;
};

enum class FormatErrc {
    io,
    bad_magic,
    version_mismatch,
    truncated_payload,
    label_out_of_range,
    hash_mismatch,
    parse,
};

inline const char* to_string(FormatErrc code) {
    switch (code) {
    case FormatErrc::io: return "io error";
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::version_mismatch: return "version mismatch";
    case FormatErrc::truncated_payload: return "truncated payload";
    case FormatErrc::label_out_of_range: return "label out of range";
    case FormatErrc::hash_mismatch: return "hash mismatch";
    case FormatErrc::parse: return "parse error";
    }
    return "unknown";
}

/// Malformed or unreadable file. `code()` distinguishes the failure.
class FormatError : public Error {
public:
    FormatError(FormatErrc code, const std::string& detail)
        : Error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    FormatErrc code() const noexcept { return code_; }

private:
    FormatErrc code_;
};

} // namespace cak
