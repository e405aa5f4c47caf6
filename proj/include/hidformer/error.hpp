#pragma once

#include <stdexcept>
#include <string>

namespace hidformer {

enum class ErrorKind {
  kData,        // malformed or insufficient input data, I/O
  kCorruption,  // checkpoint files inconsistent
  kConfig,      // invalid configuration
  kContract,    // shape/precondition violation by the caller
  kNumeric,     // non-finite values, divergence
};

/// Base exception for every failure raised by the library. The message is
/// prefixed with the module that raised it ("data: ...", "model: ...").
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& module, const std::string& what)
      : std::runtime_error(module + ": " + what), kind_(kind), module_(module) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

struct DataError : Error {
  DataError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kData, module, what) {}
};

struct CorruptionError : Error {
  CorruptionError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kCorruption, module, what) {}
};

struct ConfigError : Error {
  ConfigError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kConfig, module, what) {}
};

struct ContractError : Error {
  ContractError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kContract, module, what) {}
};

struct NumericError : Error {
  NumericError(const std::string& module, const std::string& what)
      : Error(ErrorKind::kNumeric, module, what) {}
};

/// CLI exit code for an error kind: 1 data/IO, 2 config, 3 numeric.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kData:
    case ErrorKind::kCorruption:
      return 1;
    case ErrorKind::kConfig:
    case ErrorKind::kContract:
      return 2;
    case ErrorKind::kNumeric:
      return 3;
  }
  return 1;
}

}  // namespace hidformer
