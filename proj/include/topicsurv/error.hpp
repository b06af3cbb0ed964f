#pragma once

#include <stdexcept>
#include <string>

namespace topicsurv {

enum class ErrorKind {
  kInput,      // malformed or inconsistent user input
  kNumerical,  // solver divergence, non-finite objective
  kVersion,    // persisted artifact has an unsupported format_version
  kChecksum,   // persisted artifact is corrupt or truncated
};

/// Base for every error raised by the library. `stage` names the pipeline
/// step that failed (empty when raised outside the pipeline).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string stage = {})
      : std::runtime_error(stage.empty() ? message : "[" + stage + "] " + message),
        kind_(kind),
        stage_(std::move(stage)),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& message() const noexcept { return message_; }

  Error with_stage(const std::string& stage) const {
    return Error(kind_, message_, stage_.empty() ? stage : stage + "/" + stage_);
  }

 private:
  ErrorKind kind_;
  std::string stage_;
  std::string message_;
};

inline Error input_error(const std::string& msg) { return Error(ErrorKind::kInput, msg); }
inline Error numerical_error(const std::string& msg) { return Error(ErrorKind::kNumerical, msg); }

}  // namespace topicsurv
