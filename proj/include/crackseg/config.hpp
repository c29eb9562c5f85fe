#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "crackseg/common.hpp"

namespace crackseg {

/// Every documented run-configuration key with its default. Values come
/// from an optional key=value file overlaid by CLI flags (flags win).
struct RunConfig {
  // model
  std::string model = "resunet";  // resunet | unet | segnet
  int in_channels = 1;
  int base_filters = 16;
  int depth = 3;
  int kernel = 3;
  // ensemble
  std::string kernels = "3,5,7,9";
  int meta_channels = 16;
  int stage2_epochs = 0;  // 0 means: same as epochs
  // training
  int batch_size = 32;
  int epochs = 15;
  double learning_rate = 1e-3;
  int seed = 0;
  std::string optimizer = "adam";
  // data and outputs
  std::string data;
  int size = 128;
  double split_train = 0.8;
  double split_val = 0.1;
  double split_test = 0.1;
  double threshold = 0.5;
  std::string out = ".";
  bool timing = false;  // write real wall-clock into history CSVs
};

namespace detail {

inline int parse_config_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("junk");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' wants an integer, got '" + v + "'");
  }
}

inline double parse_config_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("junk");
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' wants a number, got '" + v + "'");
  }
}

inline bool parse_config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' wants true/false, got '" + v + "'");
}

inline std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline void apply_config_kv(RunConfig& c, const std::string& key,
                            const std::string& value) {
  using detail::parse_config_bool;
  using detail::parse_config_double;
  using detail::parse_config_int;
  if (key == "model")
    c.model = value;
  else if (key == "in_channels")
    c.in_channels = parse_config_int(key, value);
  else if (key == "base_filters")
    c.base_filters = parse_config_int(key, value);
  else if (key == "depth")
    c.depth = parse_config_int(key, value);
  else if (key == "kernel")
    c.kernel = parse_config_int(key, value);
  else if (key == "kernels")
    c.kernels = value;
  else if (key == "meta_channels")
    c.meta_channels = parse_config_int(key, value);
  else if (key == "stage2_epochs")
    c.stage2_epochs = parse_config_int(key, value);
  else if (key == "batch_size")
    c.batch_size = parse_config_int(key, value);
  else if (key == "epochs")
    c.epochs = parse_config_int(key, value);
  else if (key == "learning_rate")
    c.learning_rate = parse_config_double(key, value);
  else if (key == "seed")
    c.seed = parse_config_int(key, value);
  else if (key == "optimizer")
    c.optimizer = value;
  else if (key == "data")
    c.data = value;
  else if (key == "size")
    c.size = parse_config_int(key, value);
  else if (key == "split_train")
    c.split_train = parse_config_double(key, value);
  else if (key == "split_val")
    c.split_val = parse_config_double(key, value);
  else if (key == "split_test")
    c.split_test = parse_config_double(key, value);
  else if (key == "threshold")
    c.threshold = parse_config_double(key, value);
  else if (key == "out")
    c.out = value;
  else if (key == "timing")
    c.timing = parse_config_bool(key, value);
  else
    throw ConfigError("unknown config key '" + key + "'");
}

/// key=value lines; blank lines and '#' comments allowed.
inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + t + "'");
    apply_config_kv(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
}

inline std::map<std::string, std::string> config_as_map(const RunConfig& c) {
  char num[64];
  auto fmt = [&num](double v) {
    std::snprintf(num, sizeof(num), "%g", v);
    return std::string(num);
  };
  return {{"model", c.model},
          {"in_channels", std::to_string(c.in_channels)},
          {"base_filters", std::to_string(c.base_filters)},
          {"depth", std::to_string(c.depth)},
          {"kernel", std::to_string(c.kernel)},
          {"kernels", c.kernels},
          {"meta_channels", std::to_string(c.meta_channels)},
          {"stage2_epochs", std::to_string(c.stage2_epochs)},
          {"batch_size", std::to_string(c.batch_size)},
          {"epochs", std::to_string(c.epochs)},
          {"learning_rate", fmt(c.learning_rate)},
          {"seed", std::to_string(c.seed)},
          {"optimizer", c.optimizer},
          {"data", c.data},
          {"size", std::to_string(c.size)},
          {"split_train", fmt(c.split_train)},
          {"split_val", fmt(c.split_val)},
          {"split_test", fmt(c.split_test)},
          {"threshold", fmt(c.threshold)},
          {"out", c.out},
          {"timing", c.timing ? "true" : "false"}};
}

/// Provenance file written next to every training run's outputs.
inline void write_resolved_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write resolved config " + path);
  for (const auto& [k, v] : config_as_map(c)) out << k << "=" << v << "\n";
}

/// Parses a comma-separated integer list (the ensemble `kernels` key).
inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  size_t at = 0;
  while (at <= s.size()) {
    const size_t comma = std::min(s.find(',', at), s.size());
    const std::string tok = detail::trim(s.substr(at, comma - at));
    if (tok.empty()) throw ConfigError("bad integer list '" + s + "'");
    out.push_back(detail::parse_config_int("kernels", tok));
    at = comma + 1;
  }
  return out;
}

/// Creates the directory (if needed) and proves it is writable; CLI
/// commands call this before doing any work.
inline void ensure_outdir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec && !fs::is_directory(dir))
    throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
  const std::string probe = dir + "/.write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw ConfigError("output directory not writable: " + dir);
  }
  fs::remove(probe, ec);
}

}  // namespace crackseg
