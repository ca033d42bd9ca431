#pragma once

#include <atomic>
#include <string>

namespace shwy {

enum class LogLevel : int { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kOff = 4 };

// Process-wide threshold; messages below it are dropped. Defaults to kWarning.
void set_log_level(LogLevel level);
LogLevel log_level();

// Writes "shwy: <level>: <message>" to stderr.
void log_message(LogLevel level, const std::string& message);

inline void log_info(const std::string& message) { log_message(LogLevel::kInfo, message); }
inline void log_warning(const std::string& message) { log_message(LogLevel::kWarning, message); }

}  // namespace shwy
