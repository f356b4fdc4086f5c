// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "machgen/common.hpp"
#include "machgen/signalgen.hpp"

namespace machgen::caption {

inline constexpr std::size_t kEmbedDim = 768;

struct Caption {
  std::string text;
  signal::MetadataRecord source;
};

/// Sequence of 768-d token vectors standing in for a text-encoder output.
struct ConditionEmbedding {
  std::size_t token_count = 0;
  std::vector<double> values;  // token_count x kEmbedDim, row-major

  const double* token(std::size_t i) const { return &values[i * kEmbedDim]; }
};

// ---------------------------------------------------------------------------
// Caption templates. One template per machine type, parameterized by
// attribute slots; absent attributes drop their clause. The machine word for
// slide_rail is "slider".
// ---------------------------------------------------------------------------

inline Caption caption_from_metadata(const signal::MetadataRecord& meta) {
  using signal::Condition;
  using signal::MachineType;
  meta.validate();
  const bool anom = meta.condition == Condition::anomalous;
  const auto cause = meta.attr("anomaly");
  std::string text;
  switch (meta.machine) {
    case MachineType::bearing: {
      text = "A bearing";
      if (auto v = meta.attr("velocity")) text += " operating on velocity of " + *v;
      if (anom) {
        text += " with anomaly";
        if (cause) text += " due to " + *cause;
      }
      if (auto v = meta.attr("location")) text += " at location " + *v;
      break;
    }
    case MachineType::gearbox: {
      text = "A gearbox";
      if (auto v = meta.attr("model")) {
        text += " model";
        if (!v->empty()) text += " " + *v;
      }
      std::vector<std::string> clauses;
      if (auto v = meta.attr("voltage")) clauses.push_back("voltage of " + *v);
      if (auto v = meta.attr("weight")) clauses.push_back("weight of " + *v);
      for (std::size_t i = 0; i < clauses.size(); ++i)
        text += (i == 0 ? " operating on " : " and ") + clauses[i];
      if (anom) {
        text += " with anomaly";
        if (cause) text += " due to " + *cause;
      }
      break;
    }
    case MachineType::fan: {
      text = "A fan";
      if (auto v = meta.attr("model")) {
        text += " model";
        if (!v->empty()) text += " " + *v;
      }
      text += " is running";
      if (anom && cause)
        text += " on " + *cause;
      else if (auto v = meta.attr("power"))
        text += " on " + *v;
      if (anom) text += " with anomaly";
      break;
    }
    case MachineType::slide_rail: {
      text = "A";
      if (auto v = meta.attr("type"); v && !v->empty()) text += " " + *v;
      text += " slider";
      if (auto v = meta.attr("velocity")) text += " operating on velocity of " + *v;
      if (auto v = meta.attr("acceleration"))
        text += " and an acceleration of " + *v;
      if (anom) {
        text += " is with an anomaly";
        if (cause) text += " due to " + *cause;
      }
      break;
    }
    case MachineType::valve: {
      text = "A valve";
      if (auto v = meta.attr("pattern")) text += " of moving pattern " + *v;
      if (auto v = meta.attr("surroundings")) text += " in " + *v + " surroundings";
      if (anom) {
        text += " with anomaly";
        if (cause) text += " due to " + *cause;
      }
      break;
    }
  }
  Caption c;
  c.text = std::move(text);
  c.source = meta;
  return c;
}

/// Pattern-matches a caption back to (machine, condition). Used as the
/// template inverse check; every generated caption must round-trip.
struct CaptionParse {
  signal::MachineType machine;
  signal::Condition condition;
};

inline CaptionParse parse_caption(const std::string& text) {
  using signal::MachineType;
  CaptionParse out{MachineType::fan, signal::Condition::normal};
  struct Pair {
    const char* word;
    MachineType machine;
  };
  static const Pair words[] = {{"bearing", MachineType::bearing},
                               {"gearbox", MachineType::gearbox},
                               {"fan", MachineType::fan},
                               {"slider", MachineType::slide_rail},
                               {"valve", MachineType::valve}};
  bool found = false;
  for (const auto& w : words) {
    if (text.find(w.word) != std::string::npos) {
      require(!found, "caption names more than one machine: " + text);
      out.machine = w.machine;
      found = true;
    }
  }
  require(found, "caption names no machine type: " + text);
  out.condition = text.find("anomaly") != std::string::npos
                      ? signal::Condition::anomalous
                      : signal::Condition::normal;
  return out;
}

// ---------------------------------------------------------------------------
// Hash embeddings. Tokens are lowercased alphanumeric runs; each token maps
// to a fixed pseudo-random unit vector seeded by a stable hash of the token
// string. No trained weights anywhere.
// ---------------------------------------------------------------------------

inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

inline void token_vector(const std::string& token, double* out) {
  Rng rng(hash_mix(hash_str(token), hash_str("token-embed-v1")));
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < kEmbedDim; ++i) {
    out[i] = rng.normal();
    norm_sq += out[i] * out[i];
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (std::size_t i = 0; i < kEmbedDim; ++i) out[i] *= inv;
}

inline ConditionEmbedding encode_caption(const Caption& cap) {
  require(!cap.text.empty(), "cannot encode an empty caption");
  const std::vector<std::string> tokens = tokenize(cap.text);
  require(!tokens.empty(), "caption has no tokens: " + cap.text);
  ConditionEmbedding emb;
  emb.token_count = tokens.size();
  emb.values.resize(tokens.size() * kEmbedDim);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    token_vector(tokens[i], &emb.values[i * kEmbedDim]);
  return emb;
}

inline ConditionEmbedding encode_text(const std::string& text) {
  Caption c;
  c.text = text;
  return encode_caption(c);
}

}  // namespace machgen::caption
