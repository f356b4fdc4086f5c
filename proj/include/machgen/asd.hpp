// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "machgen/common.hpp"
#include "machgen/dsp.hpp"
#include "machgen/manifest.hpp"
#include "machgen/signalgen.hpp"
#include "machgen/tensor.hpp"

// Unsupervised anomaly detection: a dense autoencoder over log-mel context
// windows, trained on normal clips only and scored by reconstruction error.
// The downstream comparison trains one detector per machine type and
// contrasts AUCs between a real-anomaly eval set and a generated-anomaly
// eval set.

namespace machgen::asd {

struct DetectorConfig {
  std::size_t mel_bands = 64;
  double mel_fmax = 4500.0;  // detector features stay inside the codec band
  std::size_t context = 5;   // frames per window -> input dim 320
  std::vector<std::size_t> hidden = {128, 64, 8, 64, 128};
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;

  std::size_t input_dim() const { return mel_bands * context; }
};

struct DetectorModel {
  DetectorConfig config;
  std::vector<Tensor> weights;  // layer l: (out_l, in_l)
  std::vector<Tensor> biases;
  std::vector<double> feat_mean, feat_std;  // training standardization
  std::vector<double> epoch_loss;           // mean train loss per epoch
};

namespace detail {

inline std::vector<std::vector<double>> context_windows(
    const signal::AudioClip& clip, const DetectorConfig& cfg) {
  const Tensor mel = dsp::log_mel_frames(clip.samples, clip.sample_rate, 1024,
                                         512, cfg.mel_bands, cfg.mel_fmax);
  const std::size_t frames = mel.dim(0);
  require(frames >= cfg.context, "clip too short for one context window");
  std::vector<std::vector<double>> windows;
  windows.reserve(frames - cfg.context + 1);
  for (std::size_t f = 0; f + cfg.context <= frames; ++f) {
    std::vector<double> w(cfg.input_dim());
    for (std::size_t k = 0; k < cfg.context; ++k)
      for (std::size_t b = 0; b < cfg.mel_bands; ++b)
        w[k * cfg.mel_bands + b] = mel.at(f + k, b);
    windows.push_back(std::move(w));
  }
  return windows;
}

/// Forward through the autoencoder (ReLU between layers, linear output).
/// Returns per-layer pre-activations when `pre` is non-null (for backprop).
inline std::vector<double> ae_forward(const DetectorModel& m,
                                      const std::vector<double>& x,
                                      std::vector<std::vector<double>>* pre) {
  std::vector<double> cur = x;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const Tensor& w = m.weights[l];
    const std::size_t out = w.dim(0), in = w.dim(1);
    std::vector<double> next(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = &w.v[o * in];
      double acc = m.biases[l].v[o];
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * cur[i];
      next[o] = acc;
    }
    if (pre) pre->push_back(next);
    if (l + 1 < m.weights.size())
      for (auto& v : next) v = v > 0.0 ? v : 0.0;  // ReLU on hidden layers
    cur = std::move(next);
  }
  return cur;
}

}  // namespace detail

/// Trains the reconstruction autoencoder on normal clips of one machine
/// type. Mixed conditions or machine types are rejected.
inline DetectorModel train_detector(const std::vector<signal::AudioClip>& clips,
                                    const DetectorConfig& cfg = {}) {
  require(!clips.empty(), "empty detector training set");
  const signal::MachineType machine = clips.front().metadata.machine;
  for (const auto& c : clips) {
    require(c.metadata.condition == signal::Condition::normal,
            "detector training set must contain only normal clips");
    require(c.metadata.machine == machine,
            "detector training set must hold a single machine type");
  }

  std::vector<std::vector<double>> windows;
  for (const auto& c : clips)
    for (auto& w : detail::context_windows(c, cfg)) windows.push_back(std::move(w));
  const std::size_t n = windows.size(), d = cfg.input_dim();

  DetectorModel model;
  model.config = cfg;
  model.feat_mean.assign(d, 0.0);
  model.feat_std.assign(d, 0.0);
  for (const auto& w : windows)
    for (std::size_t i = 0; i < d; ++i) model.feat_mean[i] += w[i];
  for (auto& v : model.feat_mean) v /= static_cast<double>(n);
  for (const auto& w : windows)
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = w[i] - model.feat_mean[i];
      model.feat_std[i] += diff * diff;
    }
  for (auto& v : model.feat_std)
    v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-6);
  for (auto& w : windows)
    for (std::size_t i = 0; i < d; ++i)
      w[i] = (w[i] - model.feat_mean[i]) / model.feat_std[i];

  // layer dims: d -> hidden... -> d
  std::vector<std::size_t> dims;
  dims.push_back(d);
  for (auto h : cfg.hidden) dims.push_back(h);
  dims.push_back(d);
  Rng rng(hash_mix(cfg.seed, hash_str("asd-init")));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Tensor w({dims[l + 1], dims[l]});
    const double scale = std::sqrt(2.0 / static_cast<double>(dims[l]));
    for (auto& v : w.v) v = rng.normal() * scale;
    model.weights.push_back(std::move(w));
    model.biases.push_back(Tensor({dims[l + 1]}));
  }

  // Adam over mini-batches with a seeded shuffle per epoch
  std::vector<Tensor> m_w(model.weights.size()), v_w(model.weights.size());
  std::vector<Tensor> m_b(model.weights.size()), v_b(model.weights.size());
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    m_w[l] = Tensor(model.weights[l].shape);
    v_w[l] = Tensor(model.weights[l].shape);
    m_b[l] = Tensor(model.biases[l].shape);
    v_b[l] = Tensor(model.biases[l].shape);
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::uint64_t adam_t = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the loop rng
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    double epoch_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, n);
      std::vector<Tensor> gw(model.weights.size()), gb(model.weights.size());
      for (std::size_t l = 0; l < model.weights.size(); ++l) {
        gw[l] = Tensor(model.weights[l].shape);
        gb[l] = Tensor(model.biases[l].shape);
      }
      double batch_loss = 0.0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const auto& x = windows[order[bi]];
        std::vector<std::vector<double>> pre;
        const auto out = detail::ae_forward(model, x, &pre);
        // activations: input + relu(pre) for hidden layers
        std::vector<std::vector<double>> acts;
        acts.push_back(x);
        for (std::size_t l = 0; l + 1 < model.weights.size(); ++l) {
          auto a = pre[l];
          for (auto& v : a) v = v > 0.0 ? v : 0.0;
          acts.push_back(std::move(a));
        }
        const double inv_bd =
            1.0 / (static_cast<double>(stop - start) * static_cast<double>(d));
        std::vector<double> delta(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double diff = out[i] - x[i];
          batch_loss += diff * diff * inv_bd;
          delta[i] = 2.0 * diff * inv_bd;
        }
        for (std::size_t l = model.weights.size(); l-- > 0;) {
          const Tensor& w = model.weights[l];
          const std::size_t o_dim = w.dim(0), i_dim = w.dim(1);
          const auto& a_in = acts[l];
          std::vector<double> delta_in(i_dim, 0.0);
          for (std::size_t o = 0; o < o_dim; ++o) {
            const double g = delta[o];
            gb[l].v[o] += g;
            const double* wr = &w.v[o * i_dim];
            double* gwr = &gw[l].v[o * i_dim];
            for (std::size_t i = 0; i < i_dim; ++i) {
              gwr[i] += g * a_in[i];
              delta_in[i] += g * wr[i];
            }
          }
          if (l > 0)  // ReLU gate on the hidden pre-activation
            for (std::size_t i = 0; i < i_dim; ++i)
              if (pre[l - 1][i] <= 0.0) delta_in[i] = 0.0;
          delta = std::move(delta_in);
        }
      }
      adam_t += 1;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
      for (std::size_t l = 0; l < model.weights.size(); ++l) {
        auto update = [&](Tensor& theta, Tensor& mm, Tensor& vv, const Tensor& g) {
          for (std::size_t i = 0; i < theta.size(); ++i) {
            mm.v[i] = b1 * mm.v[i] + (1.0 - b1) * g.v[i];
            vv.v[i] = b2 * vv.v[i] + (1.0 - b2) * g.v[i] * g.v[i];
            theta.v[i] -= cfg.learning_rate * (mm.v[i] / bc1) /
                          (std::sqrt(vv.v[i] / bc2) + eps);
          }
        };
        update(model.weights[l], m_w[l], v_w[l], gw[l]);
        update(model.biases[l], m_b[l], v_b[l], gb[l]);
      }
      epoch_acc += batch_loss;
      batches += 1;
    }
    model.epoch_loss.push_back(epoch_acc / static_cast<double>(batches));
  }
  return model;
}

/// Mean squared reconstruction error over all context windows, with a
/// pluggable reconstruction map (the identity stub gives exactly zero).
inline double anomaly_score_with(
    const DetectorModel& model, const signal::AudioClip& clip,
    const std::function<std::vector<double>(const std::vector<double>&)>&
        reconstruct) {
  const auto windows = detail::context_windows(clip, model.config);
  const std::size_t d = model.config.input_dim();
  double acc = 0.0;
  for (const auto& raw : windows) {
    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i)
      x[i] = (raw[i] - model.feat_mean[i]) / model.feat_std[i];
    const auto out = reconstruct(x);
    require(out.size() == d, "reconstruction dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = out[i] - x[i];
      acc += diff * diff;
    }
  }
  return acc / (static_cast<double>(windows.size()) * static_cast<double>(d));
}

inline double anomaly_score(const DetectorModel& model,
                            const signal::AudioClip& clip) {
  return anomaly_score_with(model, clip, [&](const std::vector<double>& x) {
    return detail::ae_forward(model, x, nullptr);
  });
}

// ---------------------------------------------------------------------------
// Rank-based (Mann-Whitney) AUC with midrank tie handling.
// ---------------------------------------------------------------------------

inline double auc(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "auc needs one label per score");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg) += 1;
  require(n_pos > 0 && n_neg > 0, "auc needs both classes present");

  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // midranks over tied runs
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  double rank_sum = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (labels[k]) rank_sum += rank[k];
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

// ---------------------------------------------------------------------------
// Paired evaluation across real-anomaly and generated-anomaly eval sets.
// ---------------------------------------------------------------------------

struct DetectionResult {
  std::vector<double> scores;
  std::vector<int> labels;
  double auc = 0.0;
};

struct AsdReport {
  // machine name -> per-set AUCs
  std::map<std::string, std::pair<double, double>> auc_by_machine;
  double mean_abs_gap = 0.0;     // mean |auc_real - auc_generated|
  double rank_correlation = 0.0; // Spearman over per-machine AUCs
};

namespace detail {

inline std::vector<double> ranks_with_ties(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  return rank;
}

inline double spearman(const std::vector<double>& a,
                       const std::vector<double>& b) {
  const auto ra = ranks_with_ties(a);
  const auto rb = ranks_with_ties(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 && db == 0.0) return ra == rb ? 1.0 : 0.0;
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

}  // namespace detail

/// Scores one manifest against one detector; labels come from the manifest
/// condition field.
inline DetectionResult score_manifest(
    const DetectorModel& model, const std::vector<manifest::Record>& records,
    const std::string& base_dir) {
  namespace fs = std::filesystem;
  DetectionResult result;
  for (const auto& rec : records) {
    signal::AudioClip clip =
        signal::read_wav((fs::path(base_dir) / rec.path).string());
    clip.metadata = signal::metadata_from_manifest(rec);
    result.scores.push_back(anomaly_score(model, clip));
    result.labels.push_back(rec.condition == "anomalous" ? 1 : 0);
  }
  result.auc = auc(result.scores, result.labels);
  return result;
}

/// Per machine type: AUC on eval set A (real anomalies) and eval set B
/// (generated anomalies), plus the gap summary.
inline AsdReport evaluate_asd(
    const std::map<std::string, DetectorModel>& detectors,
    const std::vector<manifest::Record>& eval_real,
    const std::string& real_dir,
    const std::vector<manifest::Record>& eval_generated,
    const std::string& generated_dir) {
  AsdReport report;
  std::vector<double> auc_real, auc_gen;
  for (const auto& [machine, model] : detectors) {
    std::vector<manifest::Record> a, b;
    for (const auto& r : eval_real)
      if (r.machine == machine) a.push_back(r);
    for (const auto& r : eval_generated)
      if (r.machine == machine) b.push_back(r);
    require(!a.empty(), "real eval manifest lacks machine '" + machine + "'");
    require(!b.empty(),
            "generated eval manifest lacks machine '" + machine + "'");
    const auto res_a = score_manifest(model, a, real_dir);
    const auto res_b = score_manifest(model, b, generated_dir);
    report.auc_by_machine[machine] = {res_a.auc, res_b.auc};
    auc_real.push_back(res_a.auc);
    auc_gen.push_back(res_b.auc);
  }
  double gap = 0.0;
  for (std::size_t i = 0; i < auc_real.size(); ++i)
    gap += std::abs(auc_real[i] - auc_gen[i]);
  report.mean_abs_gap = gap / static_cast<double>(auc_real.size());
  report.rank_correlation = detail::spearman(auc_real, auc_gen);
  return report;
}

inline nlohmann::ordered_json report_to_json(const AsdReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  nlohmann::ordered_json machines;
  for (const auto& [machine, aucs] : r.auc_by_machine)
    machines[machine] = {{"auc_real", aucs.first},
                         {"auc_generated", aucs.second}};
  j["machines"] = std::move(machines);
  j["summary"] = {{"mean_abs_auc_gap", r.mean_abs_gap},
                  {"rank_correlation", r.rank_correlation}};
  return j;
}

inline AsdReport from_report_json(const nlohmann::json& j) {
  AsdReport r;
  for (const auto& [machine, aucs] : j.at("machines").items())
    r.auc_by_machine[machine] = {aucs.at("auc_real").get<double>(),
                                 aucs.at("auc_generated").get<double>()};
  r.mean_abs_gap = j.at("summary").at("mean_abs_auc_gap").get<double>();
  r.rank_correlation = j.at("summary").at("rank_correlation").get<double>();
  return r;
}

}  // namespace machgen::asd
