#include "lmabo/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace lmabo::log {
namespace {

std::atomic<Level> g_level{Level::Warning};
std::mutex g_mutex;
thread_local WarningCapture* t_capture = nullptr;

const char* tag(Level level) {
    switch (level) {
        case Level::Debug: return "debug";
        case Level::Info: return "info";
        case Level::Warning: return "warning";
        case Level::Error: return "error";
    }
    return "?";
}

}  // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void write(Level lvl, const std::string& message) {
    if (lvl >= Level::Warning && t_capture != nullptr) t_capture->messages_.push_back(message);
    if (lvl < g_level.load()) return;
    std::lock_guard<std::mutex> lock(g_mutex);
    std::cerr << "[lmabo " << tag(lvl) << "] " << message << '\n';
}

WarningCapture::WarningCapture() : previous_(t_capture) { t_capture = this; }
WarningCapture::~WarningCapture() { t_capture = previous_; }

}  // namespace lmabo::log
