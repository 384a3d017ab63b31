#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attmix {

enum class ErrorCategory {
  kDimension,
  kValidation,
  kFormat,
  kContract,
  kConfig,
  kPrerequisite,
  kSchema,
  kTraining,
  kIo,
};

std::string_view category_name(ErrorCategory c);

/// Process exit code used by the CLI for each category.
int category_exit_code(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error(ErrorCategory::kDimension, m) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& m) : Error(ErrorCategory::kValidation, m) {}
};

class FormatError : public Error {
 public:
  FormatError(const std::string& m, std::size_t offset)
      : Error(ErrorCategory::kFormat, m + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error(ErrorCategory::kContract, m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error(ErrorCategory::kConfig, m) {}
};

class PrerequisiteError : public Error {
 public:
  explicit PrerequisiteError(const std::string& m) : Error(ErrorCategory::kPrerequisite, m) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& m) : Error(ErrorCategory::kSchema, m) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& m) : Error(ErrorCategory::kTraining, m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error(ErrorCategory::kIo, m) {}
};

}  // namespace attmix
