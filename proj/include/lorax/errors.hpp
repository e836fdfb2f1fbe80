#pragma once

#include <stdexcept>
#include <string>

namespace lorax {

enum class ErrorKind {
    Config,           // invalid configuration or hyperparameters
    Input,            // tensor shape / site mismatch at call time
    State,            // operation not allowed in the current lifecycle state
    Data,             // label or dataset problems
    Parse,            // malformed file on disk
    UndefinedMetric,  // metric not defined for the given matrix
    Numeric,          // non-finite values during training
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what);
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class InputError : public Error {
public:
    explicit InputError(const std::string& what) : Error(ErrorKind::Input, what) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error(ErrorKind::State, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& file, const std::string& field, const std::string& what);
    const std::string& file() const noexcept { return file_; }
    const std::string& field() const noexcept { return field_; }

private:
    std::string file_;
    std::string field_;
};

class UndefinedMetricError : public Error {
public:
    explicit UndefinedMetricError(const std::string& what)
        : Error(ErrorKind::UndefinedMetric, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Process exit codes used by the command line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

int exit_code_for(ErrorKind kind);

}  // namespace lorax
