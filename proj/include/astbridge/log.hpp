#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace astbridge::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

using Sink = std::function<void(Level, std::string_view)>;

namespace detail {

struct State {
  Level threshold = Level::info;
  Sink sink;
  std::mutex mutex;
};

inline State& state() {
  static State s;
  return s;
}

inline const char* level_name(Level lv) {
  switch (lv) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    default: return "";
  }
}

}  // namespace detail

inline void set_level(Level lv) { detail::state().threshold = lv; }

// Replaces the stderr writer; pass an empty function to restore it.
inline Sink set_sink(Sink sink) {
  auto& s = detail::state();
  std::lock_guard lock(s.mutex);
  std::swap(s.sink, sink);
  return sink;
}

inline void write(Level lv, std::string_view msg) {
  auto& s = detail::state();
  if (lv < s.threshold) return;
  std::lock_guard lock(s.mutex);
  if (s.sink) {
    s.sink(lv, msg);
  } else {
    std::cerr << "[astbridge " << detail::level_name(lv) << "] " << msg << '\n';
  }
}

inline void debug(std::string_view msg) { write(Level::debug, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void error(std::string_view msg) { write(Level::error, msg); }

}  // namespace astbridge::log
