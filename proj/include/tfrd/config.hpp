#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "tfrd/model.hpp"

namespace tfrd {

/// Everything a train/eval/ablate run needs beyond the architecture.
struct RunConfig {
  ModelConfig model;
  std::string profile = "desk";
  double lr = 1e-4;
  std::size_t batch = 6;
  std::size_t iters = 2000;
  std::size_t train_size = 128;
  std::size_t test_size = 32;
  std::uint64_t seed = 7;
  std::string data_dir = "data";
  std::string out_dir = "runs";
  std::size_t checkpoint_every = 500;
  std::size_t log_every = 1;
  bool dump_maps = false;

  void validate() const {
    model.validate();
    if (profile != "desk" && profile != "paper") throw ConfigError("profile must be desk or paper, got " + profile);
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (batch == 0) throw ConfigError("batch size must be positive");
    if (train_size == 0) throw ConfigError("train_size must be positive");
  }
};

/// Applies a named preset. The paper profile keeps c=128 at input 256.
inline void apply_profile(RunConfig& cfg, const std::string& profile) {
  if (profile == "desk") {
    cfg.model.channels = 64;
    cfg.model.input_size = 64;
  } else if (profile == "paper") {
    cfg.model.channels = 128;
    cfg.model.input_size = 256;
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
  }
  cfg.profile = profile;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& text) {
  U v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  }
  return v;
}

inline double parse_double(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  double v = 0;
  in >> v;
  if (!in || !in.eof()) throw ConfigError("bad value for " + key + ": '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}

}  // namespace detail

/// Sets one key. Unknown keys are rejected.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_number;
  if (key == "profile") {
    apply_profile(cfg, value);
  } else if (key == "channels" || key == "c") {
    cfg.model.channels = parse_number<std::size_t>(key, value);
  } else if (key == "t" || key == "stacks") {
    cfg.model.stacks = parse_number<std::size_t>(key, value);
  } else if (key == "heads") {
    cfg.model.heads = parse_number<std::size_t>(key, value);
  } else if (key == "input_size") {
    cfg.model.input_size = parse_number<std::size_t>(key, value);
  } else if (key == "progressive") {
    cfg.model.progressive = parse_bool(key, value);
  } else if (key == "baseline_msmmf") {
    cfg.model.baseline_msmmf = parse_bool(key, value);
  } else if (key == "classifier_gain") {
    cfg.model.classifier_gain = parse_double(key, value);
  } else if (key == "lr") {
    cfg.lr = parse_double(key, value);
  } else if (key == "batch") {
    cfg.batch = parse_number<std::size_t>(key, value);
  } else if (key == "iters") {
    cfg.iters = parse_number<std::size_t>(key, value);
  } else if (key == "train_size") {
    cfg.train_size = parse_number<std::size_t>(key, value);
  } else if (key == "test_size") {
    cfg.test_size = parse_number<std::size_t>(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_number<std::uint64_t>(key, value);
    cfg.model.seed = cfg.seed;
  } else if (key == "data") {
    cfg.data_dir = value;
  } else if (key == "out") {
    cfg.out_dir = value;
  } else if (key == "checkpoint_every") {
    cfg.checkpoint_every = parse_number<std::size_t>(key, value);
  } else if (key == "log_every") {
    cfg.log_every = parse_number<std::size_t>(key, value);
  } else if (key == "dump_maps") {
    cfg.dump_maps = parse_bool(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

/// Flat key=value text; '#' starts a comment.
inline void parse_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  parse_config_text(cfg, ss.str(), path);
}

}  // namespace tfrd
