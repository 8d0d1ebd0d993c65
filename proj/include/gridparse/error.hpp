#pragma once

#include <stdexcept>
#include <string>

namespace gridparse {

enum class ErrorKind {
  InvalidArgument,
  UnknownToken,
  UnknownSymbol,
  UnknownLanguage,
  GrammarInvalid,
  BudgetExceeded,
  ShapeMismatch,
  NonFinite,
  CorruptCheckpoint,
  InvalidConfig,
  Io,
  OracleMismatch,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace gridparse
