#pragma once

#include <stdexcept>
#include <string>

namespace ihmm {

// Broad failure classes; the CLI maps these onto its exit-code contract.
enum class ErrorKind { Config, Io, Numeric, Logic };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), kind(kind), code(std::move(code)) {}

  ErrorKind kind;
  std::string code;  // e.g. "NonmonotoneTime", "SingularObservedBlock"
};

[[noreturn]] inline void throw_config(const std::string& code, const std::string& what) {
  throw Error(ErrorKind::Config, code, what);
}
[[noreturn]] inline void throw_io(const std::string& code, const std::string& what) {
  throw Error(ErrorKind::Io, code, what);
}
[[noreturn]] inline void throw_numeric(const std::string& code, const std::string& what) {
  throw Error(ErrorKind::Numeric, code, what);
}
[[noreturn]] inline void throw_logic(const std::string& code, const std::string& what) {
  throw Error(ErrorKind::Logic, code, what);
}

}  // namespace ihmm
