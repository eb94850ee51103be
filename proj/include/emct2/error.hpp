#pragma once

#include <stdexcept>
#include <string>

namespace emct2 {

/// Failure categories. Each maps onto one process exit code of the CLI.
enum class ErrorKind {
    InvalidArgument,   ///< bad parameters, schema violations, protocol mismatch
    Io,                ///< missing/unwritable files, truncated or corrupted payloads
    Degenerate,        ///< numerically undefined results
    Unsupported,       ///< valid input the pipeline cannot handle
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& what) : Error(ErrorKind::InvalidArgument, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

struct DegenerateResult : Error {
    explicit DegenerateResult(const std::string& what) : Error(ErrorKind::Degenerate, what) {}
};

struct UnsupportedProtocol : Error {
    explicit UnsupportedProtocol(const std::string& what) : Error(ErrorKind::Unsupported, what) {}
};

struct ProtocolMismatch : Error {
    explicit ProtocolMismatch(const std::string& what) : Error(ErrorKind::InvalidArgument, what) {}
};

/// Process exit code for an error category: 2 validation, 3 I/O, 4 numeric degeneracy.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::Unsupported:
        return 2;
    case ErrorKind::Io:
        return 3;
    case ErrorKind::Degenerate:
        return 4;
    }
    return 1;
}

} // namespace emct2
