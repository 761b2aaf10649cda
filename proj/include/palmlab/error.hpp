// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace palmlab {

/// Coarse classification used by the CLI to pick an exit code.
enum class ErrorCategory {
  kConfig,      // bad flags, templates, config values
  kIo,          // file system failures
  kData,        // malformed or inconsistent datasets
  kNumerical,   // degenerate norms, non-finite losses
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define PALMLAB_DEFINE_ERROR(Name, Category)                   \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& what)                     \
        : Error(ErrorCategory::Category, #Name ": " + what) {} \
  }

PALMLAB_DEFINE_ERROR(DegenerateNorm, kNumerical);
PALMLAB_DEFINE_ERROR(NumericalFailure, kNumerical);
PALMLAB_DEFINE_ERROR(IndexOutOfRange, kConfig);
PALMLAB_DEFINE_ERROR(ShapeMismatch, kConfig);
PALMLAB_DEFINE_ERROR(InvalidSpec, kConfig);
PALMLAB_DEFINE_ERROR(ConfigError, kConfig);
PALMLAB_DEFINE_ERROR(BadTemplate, kConfig);
PALMLAB_DEFINE_ERROR(EmptyText, kConfig);
PALMLAB_DEFINE_ERROR(IoError, kIo);
PALMLAB_DEFINE_ERROR(FormatError, kData);
PALMLAB_DEFINE_ERROR(DimensionMismatch, kData);
PALMLAB_DEFINE_ERROR(TooFewSamples, kData);
PALMLAB_DEFINE_ERROR(EmptyTrainSet, kData);
PALMLAB_DEFINE_ERROR(MissingClass, kData);
PALMLAB_DEFINE_ERROR(EmptyClass, kData);
PALMLAB_DEFINE_ERROR(NoFolds, kData);
PALMLAB_DEFINE_ERROR(EmptyResults, kData);

#undef PALMLAB_DEFINE_ERROR

}  // namespace palmlab
