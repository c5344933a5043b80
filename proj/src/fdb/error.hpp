#pragma once

#include <stdexcept>
#include <string>

namespace fdb {

// Failure categories. The driver maps these onto process exit codes and the
// C API maps them onto fdb_status values.
enum class ErrorKind {
  io,          // unreadable or unwritable path
  format,      // bytes on disk do not match the expected layout
  contract,    // caller violated a precondition (shape, index, variant)
  validation,  // a value fails a domain invariant (NaN, count mismatch)
  data,        // dataset content missing or unusable for the request
  config,      // configuration document rejected
  runtime,     // anything else
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

const char* to_string(ErrorKind kind) noexcept;

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::contract, what);
}

}  // namespace fdb
