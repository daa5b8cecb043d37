#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace actionvlad {

/// Category attached to every error thrown by the library. The CLI maps each
/// category to its own exit code and prints the category name on stderr.
enum class ErrorKind {
    dimension_mismatch,
    non_finite,
    invalid_argument,
    io_failure,
    bad_magic,
    size_mismatch,
    version_mismatch,
    checksum_mismatch,
    parse_error,
    label_error,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::dimension_mismatch: return "dimension_mismatch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::io_failure: return "io_failure";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::size_mismatch: return "size_mismatch";
    case ErrorKind::version_mismatch: return "version_mismatch";
    case ErrorKind::checksum_mismatch: return "checksum_mismatch";
    case ErrorKind::parse_error: return "parse_error";
    case ErrorKind::label_error: return "label_error";
    }
    return "unknown";
}

/// Process exit code for a category; 1 is reserved for unexpected failures.
constexpr int exit_code(ErrorKind kind) noexcept
{
    return 10 + static_cast<int>(kind);
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message)
{
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message)
{
    if (!condition)
        fail(kind, message);
}

} // namespace actionvlad
