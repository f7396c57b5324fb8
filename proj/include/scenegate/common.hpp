#pragma once

#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace scenegate {

// Base error. `category()` is the one-word machine-parsable class the CLI
// prints on failure.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual const char* category() const noexcept { return "internal"; }
};

#define SCENEGATE_DEFINE_ERROR(NAME, CATEGORY)                                 \
    class NAME : public Error {                                                \
    public:                                                                    \
        explicit NAME(const std::string& msg) : Error(msg) {}                  \
        const char* category() const noexcept override { return CATEGORY; }    \
    }

SCENEGATE_DEFINE_ERROR(ShapeError, "shape");
SCENEGATE_DEFINE_ERROR(MaskError, "mask");
SCENEGATE_DEFINE_ERROR(ContractError, "contract");
SCENEGATE_DEFINE_ERROR(ConfigError, "config");
SCENEGATE_DEFINE_ERROR(DataError, "data");
SCENEGATE_DEFINE_ERROR(ParseError, "parse");
SCENEGATE_DEFINE_ERROR(DeterminismError, "determinism");
SCENEGATE_DEFINE_ERROR(GenerationError, "generation");

#undef SCENEGATE_DEFINE_ERROR

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Level comes from SCENEGATE_LOG (error|info|debug); default info.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("SCENEGATE_LOG");
        if (env == nullptr) return LogLevel::kInfo;
        const std::string v(env);
        if (v == "error") return LogLevel::kError;
        if (v == "info") return LogLevel::kInfo;
        if (v == "debug") return LogLevel::kDebug;
        std::fprintf(stderr, "[scenegate] unknown SCENEGATE_LOG value '%s', using info\n",
                     v.c_str());
        return LogLevel::kInfo;
    }();
    return level;
}

inline void log_at(LogLevel lv, const char* tag, const std::string& msg) {
    if (static_cast<int>(lv) <= static_cast<int>(log_level())) {
        std::fprintf(stderr, "[scenegate %s] %s\n", tag, msg.c_str());
    }
}

inline void log_error(const std::string& msg) { log_at(LogLevel::kError, "error", msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::kInfo, "info", msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::kDebug, "debug", msg); }

}  // namespace scenegate
