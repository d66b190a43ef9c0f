#pragma once

#include <functional>
#include <string>

namespace peft {

enum class LogLevel { Info = 0, Warning = 1 };

using LogSink = std::function<void(LogLevel, const std::string&)>;

// Replaces the process-wide sink (default: stderr). Pass an empty sink to restore it.
void set_log_sink(LogSink sink);
void log_info(const std::string& message);
void log_warning(const std::string& message);

}  // namespace peft
