#pragma once

#include <string>
#include <vector>

namespace lmabo::log {

enum class Level { Debug, Info, Warning, Error };

void set_level(Level level);
Level level();

void write(Level level, const std::string& message);

inline void debug(const std::string& m) { write(Level::Debug, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void warn(const std::string& m) { write(Level::Warning, m); }
inline void error(const std::string& m) { write(Level::Error, m); }

/// Collects warnings emitted on the current thread while alive, in addition to
/// printing them. The harness uses this to attach warnings to an iteration record.
class WarningCapture {
public:
    WarningCapture();
    ~WarningCapture();
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    const std::vector<std::string>& messages() const { return messages_; }

private:
    friend void write(Level, const std::string&);
    std::vector<std::string> messages_;
    WarningCapture* previous_;
};

}  // namespace lmabo::log
