#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace symcode {

enum class Errc {
  config,
  io,
  transport,
  credential,
  parse,
  schema,
  validation,
  duplicate_id,
  range,
  empty_input,
  template_error,
  malformed_output,
  unknown_term,
  not_found,
  dimension,
  degenerate_vector,
  argument,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::config: return "config";
    case Errc::io: return "io";
    case Errc::transport: return "transport";
    case Errc::credential: return "credential";
    case Errc::parse: return "parse";
    case Errc::schema: return "schema";
    case Errc::validation: return "validation";
    case Errc::duplicate_id: return "duplicate-id";
    case Errc::range: return "range";
    case Errc::empty_input: return "empty-input";
    case Errc::template_error: return "template";
    case Errc::malformed_output: return "malformed-output";
    case Errc::unknown_term: return "unknown-term";
    case Errc::not_found: return "not-found";
    case Errc::dimension: return "dimension";
    case Errc::degenerate_vector: return "degenerate-vector";
    case Errc::argument: return "argument";
  }
  return "unknown";
}

/// Single exception type for the toolkit; the code carries the category.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + " error: " + message), code_(code), message_(message) {}

  Errc code() const noexcept { return code_; }
  /// Message without the category prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

/// Transport failures additionally carry the last HTTP status (0 = no response)
/// and whether a retry is worthwhile.
class TransportError : public Error {
 public:
  TransportError(int status, bool retryable, const std::string& message)
      : Error(Errc::transport, message), status_(status), retryable_(retryable) {}

  int status() const noexcept { return status_; }
  bool retryable() const noexcept { return retryable_; }

 private:
  int status_;
  bool retryable_;
};

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitTransport = 4;
inline constexpr int kExitValidation = 5;

constexpr int exit_code_for(Errc code) {
  switch (code) {
    case Errc::config:
    case Errc::template_error:
      return kExitConfig;
    case Errc::io:
      return kExitIo;
    case Errc::transport:
    case Errc::credential:
      return kExitTransport;
    case Errc::argument:
      return kExitUsage;
    default:
      return kExitValidation;
  }
}

}  // namespace symcode
