#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbr {

/// Discriminates validation failures so callers and tests can branch on the
/// cause without string matching.
enum class ErrorCode {
  validation,
  generation,
  template_error,
  usage,
  query,
  alignment,
  degenerate_target,
  dimension,
  unsupported,
  undefined_score,
  assembly,
  empty_cell,
  singular,
  out_of_range,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input values or usage. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  ValidationError(ErrorCode code, const std::string& msg)
      : Error(msg), code_(code) {}
  explicit ValidationError(const std::string& msg)
      : ValidationError(ErrorCode::validation, msg) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// A required string could not be located; carries the absent items.
class AlignmentError : public ValidationError {
 public:
  AlignmentError(std::vector<std::string> missing, const std::string& msg)
      : ValidationError(ErrorCode::alignment, msg), missing_(std::move(missing)) {}
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

/// Design-matrix assembly failed for the listed samples.
class AssemblyError : public ValidationError {
 public:
  AssemblyError(std::vector<std::string> sample_ids, const std::string& msg)
      : ValidationError(ErrorCode::assembly, msg), sample_ids_(std::move(sample_ids)) {}
  const std::vector<std::string>& sample_ids() const noexcept { return sample_ids_; }

 private:
  std::vector<std::string> sample_ids_;
};

/// Malformed binary or JSON artifact. The CLI maps these to exit code 2.
class FormatError : public Error {
 public:
  FormatError(std::uint64_t offset, const std::string& msg)
      : Error(msg + " (at byte " + std::to_string(offset) + ")"), offset_(offset), detail_(msg) {}
  explicit FormatError(const std::string& msg) : Error(msg), offset_(0), detail_(msg) {}

  std::uint64_t offset() const noexcept { return offset_; }
  /// The message without the offset suffix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::uint64_t offset_;
  std::string detail_;
};

/// File could not be opened, read or written. Exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbr
