#pragma once

#include <stdexcept>
#include <string>

namespace karst {

/// Broad failure classes. The CLI maps each one to its own exit code.
enum class ErrorKind {
  InvalidInput = 2,      // malformed or inconsistent data files
  InvalidParameter = 3,  // parameters that violate model constraints
  Domain = 4,            // values outside a mathematical domain
  Numerical = 5,         // rank deficiency, non-finite results, failed solves
  Config = 6,            // contradictory or missing configuration
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid input";
    case ErrorKind::InvalidParameter: return "invalid parameter";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Numerical: return "numerical error";
    case ErrorKind::Config: return "configuration error";
  }
  return "error";
}

}  // namespace karst
