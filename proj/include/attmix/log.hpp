#pragma once

#include <string>

namespace attmix {

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Level from AM_LOG (error, warn, info, debug); warn when unset or unknown.
LogLevel log_level();
void set_log_level(LogLevel level);

// Thread-safe, one line per call on stderr.
void log_message(LogLevel level, const std::string& msg);

inline void log_warn(const std::string& m) { log_message(LogLevel::kWarn, m); }
inline void log_info(const std::string& m) { log_message(LogLevel::kInfo, m); }
inline void log_debug(const std::string& m) { log_message(LogLevel::kDebug, m); }

}  // namespace attmix
