#include "tepo/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace tepo::log {

namespace {

Level from_env() {
  const char* v = std::getenv("TEPO_LOG");
  if (!v) return Level::Info;
  if (std::strcmp(v, "error") == 0) return Level::Error;
  if (std::strcmp(v, "debug") == 0) return Level::Debug;
  return Level::Info;
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(from_env())};
  return lvl;
}

std::mutex& out_mutex() {
  static std::mutex m;
  return m;
}

void emit(Level l, const char* tag, const std::string& msg) {
  if (static_cast<int>(l) > current().load()) return;
  std::lock_guard lock(out_mutex());
  std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current().store(static_cast<int>(l)); }

void error(const std::string& msg) { emit(Level::Error, "error", msg); }
void info(const std::string& msg) { emit(Level::Info, "info", msg); }
void debug(const std::string& msg) { emit(Level::Debug, "debug", msg); }

}  // namespace tepo::log
