#include "fode/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace fode::log {

namespace {

Level g_level = [] {
    const char* env = std::getenv("FODE_LOG");
    if (!env) return Level::warn;
    const std::string v(env);
    if (v == "quiet") return Level::quiet;
    if (v == "warn") return Level::warn;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
}();

std::mutex g_mutex;

void emit(const char* tag, const std::string& message) {
    std::lock_guard<std::mutex> lock(g_mutex);
    std::cerr << "[fode:" << tag << "] " << message << "\n";
}

} // namespace

Level level() { return g_level; }
void set_level(Level level) { g_level = level; }

void warn(const std::string& message) {
    if (g_level >= Level::warn) emit("warn", message);
}
void info(const std::string& message) {
    if (g_level >= Level::info) emit("info", message);
}
void debug(const std::string& message) {
    if (g_level >= Level::debug) emit("debug", message);
}

} // namespace fode::log
