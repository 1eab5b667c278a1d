#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace c123 {

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

// Verbosity from C123_LOG (debug|info); anything else, or unset, keeps the
// default info level.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("C123_LOG");
        if (!env) return LogLevel::kInfo;
        const std::string v(env);
        if (v == "debug") return LogLevel::kDebug;
        if (v == "info") return LogLevel::kInfo;
        return LogLevel::kInfo;
    }();
    return level;
}

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::kInfo) std::fprintf(stderr, "[c123] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::kDebug) std::fprintf(stderr, "[c123] %s\n", msg.c_str());
}

}  // namespace c123
