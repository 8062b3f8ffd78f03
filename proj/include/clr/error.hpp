#pragma once

#include <stdexcept>
#include <string>

namespace clr {

enum class ErrorKind { configuration, data, run, usage, internal, io };

// Base for every error raised by the library. The kind selects the CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::configuration, what) {}
};

// Malformed input data (binary records, labels out of range, shape mismatches on data).
struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct RunError : Error {
    explicit RunError(const std::string& what) : Error(ErrorKind::run, what) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct InternalError : Error {
    explicit InternalError(const std::string& what) : Error(ErrorKind::internal, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

// Non-finite objective during input-space optimization.
struct OptimizationError : RunError {
    OptimizationError(std::size_t sample, std::size_t iteration, const std::string& what)
        : RunError(what), sample_index(sample), iteration_index(iteration) {}
    std::size_t sample_index;
    std::size_t iteration_index;
};

/// Process exit code for an error kind: 2 configuration/usage, 3 data, 4 run.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::configuration:
    case ErrorKind::usage: return 2;
    case ErrorKind::data: return 3;
    default: return 4;
    }
}

} // namespace clr
