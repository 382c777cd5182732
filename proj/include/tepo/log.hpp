#pragma once

// stderr logging; verbosity from TEPO_LOG = error | info | debug (default info).

#include <string>

namespace tepo::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

/// Parsed once from the environment. Unknown values fall back to info.
Level level();
void set_level(Level l);

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace tepo::log
