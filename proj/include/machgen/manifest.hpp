// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "machgen/common.hpp"

namespace machgen::manifest {

/// One dataset clip: a single JSON object per line in manifest.jsonl.
/// `attributes` is an ordered list of key/value pairs; order is meaningful
/// because captions render attributes in record order.
struct Record {
  std::string path;
  std::string machine;
  std::string condition;  // "normal" | "anomalous"
  std::vector<std::pair<std::string, std::string>> attributes;
  std::uint64_t seed = 0;
  std::string split;  // "train" | "eval"
  std::string caption;  // empty until the caption stage runs
};

inline nlohmann::ordered_json to_json(const Record& r) {
  nlohmann::ordered_json j;
  j["path"] = r.path;
  j["machine"] = r.machine;
  j["condition"] = r.condition;
  auto attrs = nlohmann::ordered_json::array();
  for (const auto& [k, v] : r.attributes)
    attrs.push_back(nlohmann::ordered_json::array({k, v}));
  j["attributes"] = std::move(attrs);
  j["seed"] = r.seed;
  j["split"] = r.split;
  if (!r.caption.empty()) j["caption"] = r.caption;
  return j;
}

inline Record from_json(const nlohmann::json& j) {
  Record r;
  try {
    r.path = j.at("path").get<std::string>();
    r.machine = j.at("machine").get<std::string>();
    r.condition = j.at("condition").get<std::string>();
    for (const auto& a : j.at("attributes"))
      r.attributes.emplace_back(a.at(0).get<std::string>(),
                                a.at(1).get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.split = j.at("split").get<std::string>();
    if (j.contains("caption")) r.caption = j.at("caption").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed manifest record: ") + e.what());
  }
  return r;
}

inline void write(const std::string& path, const std::vector<Record>& records) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open manifest for write: " + path);
  for (const auto& r : records) f << to_json(r).dump() << "\n";
  require(static_cast<bool>(f), "manifest write failed: " + path);
}

inline std::vector<Record> read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open manifest for read: " + path);
  std::vector<Record> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail(path + ":" + std::to_string(lineno) + ": invalid JSON line");
    out.push_back(from_json(j));
  }
  return out;
}

}  // namespace machgen::manifest
