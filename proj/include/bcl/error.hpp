#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bcl {

enum class ErrorKind {
  dimension,
  degenerate_input,
  parameter,
  numeric,
  empty_set,
  index,
  protocol,
  undefined_query,
  io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::degenerate_input: return "degenerate input";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::empty_set: return "empty set";
    case ErrorKind::index: return "index error";
    case ErrorKind::protocol: return "protocol error";
    case ErrorKind::undefined_query: return "undefined query";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace detail
}  // namespace bcl
