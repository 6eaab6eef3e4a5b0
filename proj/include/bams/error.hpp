#pragma once

#include <stdexcept>
#include <string>

namespace bams {

/// Error categories; the command-line tool maps them to exit codes.
enum class ErrorKind { config, io, numeric, schema, shape, usage };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct IoError : Error {
    IoError(const std::string& path, const std::string& what)
        : Error(ErrorKind::io, path + ": " + what), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct SchemaError : Error {
    explicit SchemaError(const std::string& what) : Error(ErrorKind::schema, what) {}
};

/// Raised by array ops; names the operation and the offending dimension.
struct ShapeError : Error {
    ShapeError(const std::string& op, const std::string& detail)
        : Error(ErrorKind::shape, op + ": " + detail) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

}  // namespace bams
