#pragma once

#include <charconv>
#include <cstdarg>
#include <cstdio>
#include <string>
#include <system_error>

namespace symreg::detail {

// printf-style formatting into a std::string.
inline std::string strprintf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list args_copy;
  va_copy(args_copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, args);
  va_end(args);
  std::string out(static_cast<std::size_t>(n), '\0');
  std::vsnprintf(out.data(), out.size() + 1, fmt, args_copy);
  va_end(args_copy);
  return out;
}

// Shortest decimal form that parses back to the same double.
inline std::string double_to_text(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace symreg::detail
