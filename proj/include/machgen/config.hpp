// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "machgen/common.hpp"

// Line-oriented "key = value" configuration with [section] headers and '#'
// comments. Every run writes its resolved configuration next to its outputs
// so a run directory is self-describing.

namespace machgen::config {

struct Config {
  // section -> key -> value; std::map keeps rendering deterministic
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const {
    const auto s = sections.find(section);
    return s != sections.end() && s->second.count(key) > 0;
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    const auto s = sections.find(section);
    if (s == sections.end()) return fallback;
    const auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
  }

  void set(const std::string& section, const std::string& key,
           const std::string& value) {
    sections[section][key] = value;
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key, "");
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      require(used == v.size(), "");
      return out;
    } catch (...) {
      fail("config [" + section + "] " + key + ": '" + v + "' is not a number");
    }
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key, "");
    try {
      std::size_t used = 0;
      const unsigned long long out = std::stoull(v, &used);
      require(used == v.size(), "");
      return out;
    } catch (...) {
      fail("config [" + section + "] " + key + ": '" + v +
           "' is not an unsigned integer");
    }
  }

  std::size_t get_size(const std::string& section, const std::string& key,
                       std::size_t fallback) const {
    return static_cast<std::size_t>(
        get_u64(section, key, static_cast<std::uint64_t>(fallback)));
  }

  /// Merge other's entries over this one's.
  void overlay(const Config& other) {
    for (const auto& [sec, kv] : other.sections)
      for (const auto& [k, v] : kv) sections[sec][k] = v;
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}
}  // namespace detail

inline Config parse(std::istream& in, const std::string& name) {
  Config cfg;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      require(line.back() == ']',
              name + ":" + std::to_string(lineno) + ": unterminated section");
      section = detail::trim(line.substr(1, line.size() - 2));
      require(!section.empty(),
              name + ":" + std::to_string(lineno) + ": empty section name");
      cfg.sections[section];  // sections may be empty but must exist
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos,
            name + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    require(!key.empty(), name + ":" + std::to_string(lineno) + ": empty key");
    require(!section.empty(),
            name + ":" + std::to_string(lineno) + ": key before any [section]");
    cfg.sections[section][key] = value;
  }
  return cfg;
}

inline Config parse_file(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), "cannot open config file: " + path);
  return parse(f, path);
}

inline std::string render(const Config& cfg) {
  std::ostringstream out;
  bool first = true;
  for (const auto& [section, kv] : cfg.sections) {
    if (!first) out << "\n";
    first = false;
    out << "[" << section << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  return out.str();
}

/// Built-in defaults: a desk-scale recipe that runs end to end on one CPU.
/// Any key can be overridden by a config file or command-line flags.
inline Config defaults() {
  Config c;
  c.set("dataset", "duration", "3.0");
  c.set("dataset", "sample_rate", "16000");
  c.set("dataset", "root_seed", "42");
  c.set("dataset", "attribute_variety", "2");
  c.set("dataset", "train_normal", "40");
  c.set("dataset", "train_anomalous", "20");
  c.set("dataset", "eval_normal", "8");
  c.set("dataset", "eval_anomalous", "8");

  c.set("prepare", "bandwidth_kbps", "6");  // 8 codebooks at desk scale
  c.set("prepare", "codebook_size", "64");
  c.set("prepare", "kmeans_iterations", "15");
  c.set("prepare", "max_kmeans_frames", "40000");
  c.set("prepare", "seed", "1");

  c.set("train", "steps", "2000");
  c.set("train", "batch_size", "4");
  c.set("train", "learning_rate", "0.001");
  c.set("train", "seed", "11");
  c.set("train", "schedule_steps", "100");
  c.set("train", "beta_start", "0.001");
  c.set("train", "beta_end", "0.09");
  c.set("train", "checkpoint_interval", "500");

  c.set("model", "base_width", "16");
  c.set("model", "depth", "1");
  c.set("model", "attn_dim", "32");
  c.set("model", "heads", "2");

  c.set("generate", "duration", "3.0");
  c.set("generate", "count", "8");
  c.set("generate", "seed", "7");
  c.set("generate", "steps", "0");  // 0 = full trained chain

  c.set("asd", "epochs", "30");
  c.set("asd", "batch_size", "64");
  c.set("asd", "learning_rate", "0.001");
  c.set("asd", "seed", "3");
  return c;
}

/// Default run root comes from MACHGEN_RUN_ROOT when set, else the cwd.
inline std::string run_root() {
  const char* env = std::getenv("MACHGEN_RUN_ROOT");
  return env && *env ? std::string(env) : std::string(".");
}

inline void write_snapshot(const Config& cfg, const std::string& out_dir) {
  std::ofstream f(out_dir + "/config_snapshot.cfg", std::ios::binary);
  require(static_cast<bool>(f), "cannot write config snapshot in " + out_dir);
  f << render(cfg);
}

}  // namespace machgen::config
