#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace rsdpt {

// Error categories map to process exit codes: usage=1, data=2, anything else=3.
struct usage_error : std::runtime_error {
  explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
  explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("RSDPT_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    std::string v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

template <typename... Args>
void log_line(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
  if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
  std::fprintf(stderr, "[%s] ", tag);
  if constexpr (sizeof...(Args) == 0) {
    std::fputs(fmt, stderr);
  } else {
    std::fprintf(stderr, fmt, args...);
  }
  std::fputc('\n', stderr);
}

template <typename... Args>
void log_error(const char* fmt, Args... args) {
  log_line(LogLevel::kError, "error", fmt, args...);
}

template <typename... Args>
void log_info(const char* fmt, Args... args) {
  log_line(LogLevel::kInfo, "info", fmt, args...);
}

template <typename... Args>
void log_debug(const char* fmt, Args... args) {
  log_line(LogLevel::kDebug, "debug", fmt, args...);
}

}  // namespace rsdpt
