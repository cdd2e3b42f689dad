#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace faultrange {

/// Error categories. The CLI maps each to a distinct exit code.
enum class ErrorCode {
  config,      // invalid arguments or inconsistent configuration
  shape,       // tensor / layer shape mismatch
  io,          // file missing, unreadable or unwritable
  format,      // binary container or IDX parse failure
  schema,      // JSON document violates its schema
  training,    // optimizer diverged
  attribution, // bit attribution requested for a multi-fault campaign
};

std::string_view to_string(ErrorCode code);

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

}  // namespace faultrange
