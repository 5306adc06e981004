#pragma once

// Flat `key = value` run configuration. `#` starts a comment; blank lines are
// ignored; unknown or repeated keys are errors. Only `seed` is required.

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "sre/trainer.hpp"

namespace sre {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(const std::string& key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key, "config key '" + key + "': cannot parse '" + std::string(text) + "'");
  }
  return value;
}

inline bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key, "config key '" + key + "': expected true or false, got '" + std::string(text) + "'");
}

}  // namespace detail

inline InitMode parse_init_mode(std::string_view text) {
  if (text == "random") return InitMode::kRandom;
  if (text == "sefa" || text == "sefa-analog") return InitMode::kSefa;
  throw ConfigError("init", "config key 'init': expected random or sefa, got '" + std::string(text) + "'");
}

inline TrainConfig parse_run_config(std::string_view text) {
  TrainConfig c;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("", "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("", "config line " + std::to_string(line_no) + ": empty key");
    if (!seen.insert(key).second) throw ConfigError(key, "config key '" + key + "' given twice");
    if (value.empty()) throw ConfigError(key, "config key '" + key + "' has no value");

    using detail::parse_number;
    if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "world_seed") c.world_seed = parse_number<std::uint64_t>(key, value);
    else if (key == "e") c.e = parse_number<double>(key, value);
    else if (key == "iterations") c.iterations = parse_number<std::size_t>(key, value);
    else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
    else if (key == "direction_learning_rate") c.direction_learning_rate = parse_number<double>(key, value);
    else if (key == "k") c.latent_dim = parse_number<std::size_t>(key, value);
    else if (key == "d") c.directions = parse_number<std::size_t>(key, value);
    else if (key == "height") c.height = parse_number<std::size_t>(key, value);
    else if (key == "width") c.width = parse_number<std::size_t>(key, value);
    else if (key == "init") c.init = parse_init_mode(value);
    else if (key == "reuse_batch") c.reuse_batch = detail::parse_bool(key, value);
    else if (key == "log_every") c.log_every = parse_number<std::size_t>(key, value);
    else throw ConfigError(key, "unknown config key '" + key + "'");
  }
  if (!seen.contains("seed")) throw ConfigError("seed", "config is missing required key 'seed'");
  try {
    c.validate();
  } catch (const std::invalid_argument& err) {
    const std::string what = err.what();
    throw ConfigError(what.substr(0, what.find(':')), std::string("invalid config: ") + what);
  }
  return c;
}

inline TrainConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace sre
