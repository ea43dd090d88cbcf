#pragma once

#include <string>

namespace fode::log {

// Verbosity is read once from the FODE_LOG environment variable
// (quiet|warn|info|debug, default warn). Output goes to stderr.
enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

Level level();
void set_level(Level level);

void warn(const std::string& message);
void info(const std::string& message);
void debug(const std::string& message);

} // namespace fode::log
