#pragma once

#include <stdexcept>
#include <string>

namespace terse {

// Categories line up with the CLI exit codes and the C API status values.
enum class ErrorKind {
    internal = 1,
    config = 2,
    data = 3,
    numeric = 4,
};

class Error : public std::runtime_error {
   public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

   private:
    ErrorKind kind_;
};

// Shape and argument violations inside the tensor library.
class DimensionError : public Error {
   public:
    explicit DimensionError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class ConfigError : public Error {
   public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
   public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
   public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

}  // namespace terse
