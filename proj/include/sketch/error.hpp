// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sketch {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class ConflictError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class TemplateError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class BackendError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

/// Raised when `combine` receives embeddings that cancel out.
class DegenerateCombinationError : public Error { using Error::Error; };

/// Collects every problem found while ingesting a manifest.
class IngestionError : public Error {
 public:
  explicit IngestionError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

}  // namespace sketch
