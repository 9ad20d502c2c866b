#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wamd {

/// Row-major tensor extents. Empty shape is not used; scalars are shape {1}.
using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) n *= e;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  format_into(os, rest...);
}

}  // namespace detail

/// Builds an error message from stream-able pieces.
template <typename... Parts>
std::string msg(const Parts&... parts) {
  std::ostringstream os;
  detail::format_into(os, parts...);
  return os.str();
}

/// Rejected input (bad shapes, invalid arguments, malformed requests).
template <typename... Parts>
[[noreturn]] void reject_input(const Parts&... parts) {
  throw std::invalid_argument(msg(parts...));
}

/// Misuse of stateful machinery (double backward, missing grads, ...).
template <typename... Parts>
[[noreturn]] void reject_state(const Parts&... parts) {
  throw std::logic_error(msg(parts...));
}

}  // namespace wamd
