#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace synthalign {

enum class ErrorCode {
  config,
  precondition,
  io,
  provider_unreachable,
  quota_exceeded,
  request_rejected,
  unmatched_prompt,
  unparseable_output,
  missing_placeholder,
  all_seeds_failed,
  cannot_reach_target,
  no_data,
  budget_exceeded,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure the library reports. The code is what
/// callers switch on (the CLI maps it to an exit status).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::precondition, message);
}

}  // namespace synthalign
