#pragma once

#include <stdexcept>
#include <string>

namespace seqmask {

// Process exit codes shared by the library and the CLI.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    data = 3,
    numerical = 4,
};

class Error : public std::runtime_error {
   public:
    Error(ExitCode code, std::string kind, const std::string& message)
        : std::runtime_error(message), code_(code), kind_(std::move(kind)) {}

    ExitCode code() const { return code_; }
    // Stable machine-readable tag, e.g. "dimension_mismatch".
    const std::string& kind() const { return kind_; }

   private:
    ExitCode code_;
    std::string kind_;
};

// Shape or size disagreement between operands or between data and model.
class DimensionError : public Error {
   public:
    explicit DimensionError(const std::string& message)
        : Error(ExitCode::data, "dimension_mismatch", message) {}
};

// Invalid hyper-parameter or structural setting.
class ConfigError : public Error {
   public:
    explicit ConfigError(const std::string& message)
        : Error(ExitCode::usage, "config_error", message) {}
};

class UnknownKeyError : public Error {
   public:
    explicit UnknownKeyError(const std::string& message)
        : Error(ExitCode::usage, "unknown_config_key", message) {}
};

// Bad input values (empty sequences, out-of-range labels, constant vectors).
class InputError : public Error {
   public:
    explicit InputError(const std::string& message)
        : Error(ExitCode::data, "input_error", message) {}
};

class FormatError : public Error {
   public:
    explicit FormatError(const std::string& message)
        : Error(ExitCode::data, "malformed_file", message) {}
};

// Operation invoked in the wrong lifecycle state.
class StateError : public Error {
   public:
    explicit StateError(const std::string& message)
        : Error(ExitCode::usage, "state_error", message) {}
};

class NumericalError : public Error {
   public:
    explicit NumericalError(const std::string& message)
        : Error(ExitCode::numerical, "numerical_failure", message) {}
};

}  // namespace seqmask
