// Copyright 2026 The WPEDL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wpedl {

/// Machine-checkable failure kinds raised across the library.
enum class ErrorCode {
  // configuration
  InvalidConfig,
  UnknownField,
  MalformedJson,
  // data / ingestion
  MissingFile,
  MalformedCsv,
  DuplicateEntry,
  UnknownLabel,
  TooShort,
  NonFinite,
  EmptyClass,
  EmptyInput,
  LengthMismatch,
  LabelOutOfRange,
  ShapeMismatch,
  NyquistViolation,
  DuplicateClass,
  RowSumViolation,
  LabelSetMismatch,
  DuplicateSample,
  UnknownSample,
  UnknownIdentity,
  SingleClass,
  BadMagic,
  VersionMismatch,
  Truncated,
  IoError,
  MissingArtifact,
  SchemaViolation,
  // numerics
  NonFiniteLoss,
  ZeroTotalWeight,
  InvalidProbability,
  MetricOutOfRange,
};

/// Coarse grouping used for CLI exit codes.
enum class ErrorCategory { Config, Data, Numeric };

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownField: return "UnknownField";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::DuplicateEntry: return "DuplicateEntry";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NyquistViolation: return "NyquistViolation";
    case ErrorCode::DuplicateClass: return "DuplicateClass";
    case ErrorCode::RowSumViolation: return "RowSumViolation";
    case ErrorCode::LabelSetMismatch: return "LabelSetMismatch";
    case ErrorCode::DuplicateSample: return "DuplicateSample";
    case ErrorCode::UnknownSample: return "UnknownSample";
    case ErrorCode::UnknownIdentity: return "UnknownIdentity";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ZeroTotalWeight: return "ZeroTotalWeight";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::MetricOutOfRange: return "MetricOutOfRange";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::UnknownField:
    case ErrorCode::MalformedJson:
      return ErrorCategory::Config;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::ZeroTotalWeight:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace wpedl
