// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "machgen/captions.hpp"
#include "machgen/common.hpp"
#include "machgen/dsp.hpp"
#include "machgen/manifest.hpp"
#include "machgen/signalgen.hpp"

// Generation-quality metrics over pluggable embedding/classifier backends.
// The built-in backend is deterministic: log-mel statistics for embeddings
// and per-machine spectral-template correlation for class probabilities.

namespace machgen::metrics {

inline constexpr std::size_t kEmbedDim = 128;  // 64 mel means + 64 mel stds

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi). Deterministic; plenty fast
// for d = 128.
// ---------------------------------------------------------------------------

namespace detail {

inline void jacobi_eigen(std::vector<double>& a, std::size_t n,
                         std::vector<double>& eigvals,
                         std::vector<double>& eigvecs) {
  eigvecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = eigvecs[k * n + p], vkq = eigvecs[k * n + q];
          eigvecs[k * n + p] = c * vkp - s * vkq;
          eigvecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigvals.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigvals[i] = a[i * n + i];
}

/// Symmetric PSD matrix square root; eigenvalues below 1e-8 clamp to zero.
inline std::vector<double> sqrtm_psd(const std::vector<double>& m,
                                     std::size_t n) {
  std::vector<double> a = m;
  // force symmetry before decomposing
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (a[i * n + j] + a[j * n + i]);
      a[i * n + j] = avg;
      a[j * n + i] = avg;
    }
  std::vector<double> vals, vecs;
  jacobi_eigen(a, n, vals, vecs);
  std::vector<double> out(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = vals[k] < 1e-8 ? 0.0 : vals[k];
    const double root = std::sqrt(lam);
    if (root == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = vecs[i * n + k] * root;
      if (vik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j)
        out[i * n + j] += vik * vecs[j * n + k];
    }
  }
  return out;
}

inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b,
                                  std::size_t n) {
  std::vector<double> c(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += aik * b[k * n + j];
    }
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embedding statistics and the Frechet distance
// ---------------------------------------------------------------------------

struct EmbeddingStats {
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<double> mean;        // dim
  std::vector<double> covariance;  // dim x dim, unbiased (n - 1)
};

inline EmbeddingStats compute_stats(
    const std::vector<std::vector<double>>& embeds) {
  require(embeds.size() >= 2, "need at least two embeddings for statistics");
  const std::size_t d = embeds.front().size();
  EmbeddingStats s;
  s.dim = d;
  s.count = embeds.size();
  s.mean.assign(d, 0.0);
  for (const auto& e : embeds) {
    require(e.size() == d, "embedding dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += e[i];
  }
  const double inv_n = 1.0 / static_cast<double>(embeds.size());
  for (auto& v : s.mean) v *= inv_n;
  s.covariance.assign(d * d, 0.0);
  std::vector<double> centered(d);
  for (const auto& e : embeds) {
    for (std::size_t i = 0; i < d; ++i) centered[i] = e[i] - s.mean[i];
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = centered[i];
      if (ci == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j)
        s.covariance[i * d + j] += ci * centered[j];
    }
  }
  const double inv_n1 = 1.0 / static_cast<double>(embeds.size() - 1);
  for (auto& v : s.covariance) v *= inv_n1;
  return s;
}

/// Frechet distance between Gaussian fits:
/// |mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), with the matrix
/// square root taken on the symmetrized product S_r^{1/2} S_g S_r^{1/2}.
inline double fad(const EmbeddingStats& real, const EmbeddingStats& gen) {
  require(real.dim == gen.dim, "embedding stats dimension mismatch");
  const std::size_t d = real.dim;
  for (double v : real.mean) require(std::isfinite(v), "non-finite stats");
  for (double v : gen.mean) require(std::isfinite(v), "non-finite stats");
  double dist = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = real.mean[i] - gen.mean[i];
    dist += diff * diff;
  }
  double trace_sum = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    trace_sum += real.covariance[i * d + i] + gen.covariance[i * d + i];

  const auto root_r = detail::sqrtm_psd(real.covariance, d);
  const auto inner =
      detail::matmul(detail::matmul(root_r, gen.covariance, d), root_r, d);
  const auto cross_root = detail::sqrtm_psd(inner, d);
  double trace_cross = 0.0;
  for (std::size_t i = 0; i < d; ++i) trace_cross += cross_root[i * d + i];

  const double value = dist + trace_sum - 2.0 * trace_cross;
  return value < 0.0 ? 0.0 : value;
}

// ---------------------------------------------------------------------------
// Class distributions: KL divergence and Inception Score
// ---------------------------------------------------------------------------

struct ClassDistribution {
  std::vector<std::vector<double>> probs;  // one probability vector per clip

  std::size_t classes() const { return probs.empty() ? 0 : probs.front().size(); }

  void validate() const {
    for (const auto& p : probs) {
      require(p.size() == probs.front().size(), "ragged class distribution");
      double sum = 0.0;
      for (double v : p) {
        require(v >= 0.0, "negative probability");
        sum += v;
      }
      require(std::abs(sum - 1.0) <= 1e-9, "probabilities must sum to 1");
    }
  }
};

inline constexpr double kProbFloor = 1e-10;

/// Mean over paired clips of KL(ref_i || gen_i); probabilities are floored
/// at 1e-10 before the log.
inline double kl_divergence(const ClassDistribution& gen,
                            const ClassDistribution& ref) {
  require(gen.probs.size() == ref.probs.size(),
          "KL needs paired clips (count mismatch)");
  require(!gen.probs.empty(), "KL on empty distributions");
  require(gen.classes() == ref.classes(), "KL class count mismatch");
  gen.validate();
  ref.validate();
  double acc = 0.0;
  for (std::size_t i = 0; i < gen.probs.size(); ++i) {
    for (std::size_t c = 0; c < ref.probs[i].size(); ++c) {
      const double pr = ref.probs[i][c];
      if (pr <= 0.0) continue;
      const double num = std::max(pr, kProbFloor);
      const double den = std::max(gen.probs[i][c], kProbFloor);
      acc += pr * std::log(num / den);
    }
  }
  return acc / static_cast<double>(gen.probs.size());
}

/// exp of the mean KL between per-clip distributions and their marginal;
/// single split.
inline double inception_score(const ClassDistribution& gen) {
  require(!gen.probs.empty(), "inception score on empty input");
  gen.validate();
  const std::size_t c_count = gen.classes();
  std::vector<double> marginal(c_count, 0.0);
  for (const auto& p : gen.probs)
    for (std::size_t c = 0; c < c_count; ++c) marginal[c] += p[c];
  for (auto& v : marginal) v /= static_cast<double>(gen.probs.size());
  double acc = 0.0;
  for (const auto& p : gen.probs) {
    for (std::size_t c = 0; c < c_count; ++c) {
      if (p[c] <= 0.0) continue;
      acc += p[c] * std::log(std::max(p[c], kProbFloor) /
                             std::max(marginal[c], kProbFloor));
    }
  }
  return std::exp(acc / static_cast<double>(gen.probs.size()));
}

// ---------------------------------------------------------------------------
// CLAP-style alignment: cosine between audio embeddings and caption
// embeddings projected into the same 128-d space by a fixed seeded random
// projection.
// ---------------------------------------------------------------------------

namespace detail {
inline const std::vector<double>& clap_projection() {
  static const std::vector<double> proj = [] {
    std::vector<double> p(kEmbedDim * caption::kEmbedDim);
    Rng rng(hash_str("clap-projection-v1"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(caption::kEmbedDim));
    for (auto& v : p) v = rng.normal() * scale;
    return p;
  }();
  return proj;
}
}  // namespace detail

/// Mean-pools the caption token vectors and projects 768 -> 128.
inline std::vector<double> project_text(const caption::ConditionEmbedding& emb) {
  std::vector<double> pooled(caption::kEmbedDim, 0.0);
  for (std::size_t t = 0; t < emb.token_count; ++t)
    for (std::size_t i = 0; i < caption::kEmbedDim; ++i)
      pooled[i] += emb.token(t)[i];
  for (auto& v : pooled) v /= static_cast<double>(emb.token_count);
  const auto& proj = detail::clap_projection();
  std::vector<double> out(kEmbedDim, 0.0);
  for (std::size_t i = 0; i < kEmbedDim; ++i) {
    const double* row = &proj[i * caption::kEmbedDim];
    double acc = 0.0;
    for (std::size_t j = 0; j < caption::kEmbedDim; ++j)
      acc += row[j] * pooled[j];
    out[i] = acc;
  }
  return out;
}

inline double cosine(const std::vector<double>& a,
                     const std::vector<double>& b) {
  require(a.size() == b.size(), "cosine dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  require(na > 0.0 && nb > 0.0, "cosine of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Mean cosine similarity over (audio, text) pairs.
inline double clap_style_score(
    const std::vector<std::vector<double>>& audio_embeds,
    const std::vector<std::vector<double>>& text_embeds) {
  require(audio_embeds.size() == text_embeds.size(),
          "clap score needs paired audio/text embeddings");
  require(!audio_embeds.empty(), "clap score on empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < audio_embeds.size(); ++i)
    acc += cosine(audio_embeds[i], text_embeds[i]);
  return acc / static_cast<double>(audio_embeds.size());
}

// ---------------------------------------------------------------------------
// Built-in deterministic backend
// ---------------------------------------------------------------------------

/// Log-mel embedding: 64 bands summarized by per-band mean and population
/// std over frames (d = 128).
inline std::vector<double> builtin_embed(const signal::AudioClip& clip) {
  const Tensor mel = dsp::log_mel_frames(clip.samples, clip.sample_rate);
  const std::size_t frames = mel.dim(0), bands = mel.dim(1);
  std::vector<double> out(2 * bands, 0.0);
  for (std::size_t b = 0; b < bands; ++b) {
    double mean = 0.0;
    for (std::size_t f = 0; f < frames; ++f) mean += mel.at(f, b);
    mean /= static_cast<double>(frames);
    double var = 0.0;
    for (std::size_t f = 0; f < frames; ++f) {
      const double d = mel.at(f, b) - mean;
      var += d * d;
    }
    out[b] = mean;
    out[bands + b] = std::sqrt(var / static_cast<double>(frames));
  }
  return out;
}

/// Classifier backend: correlation of a clip's mean log-mel profile against
/// per-machine templates (built from fixed-seed reference clips), softmaxed
/// into a 5-class distribution.
class BuiltinBackend {
 public:
  BuiltinBackend() {
    // Average each machine template over reference clips spanning the
    // attribute pools, so a template covers the machine's operating range.
    constexpr int kRefClips = 9;
    for (std::size_t m = 0; m < 5; ++m) {
      std::vector<double> acc;
      for (int i = 0; i < kRefClips; ++i) {
        signal::MetadataRecord meta;
        meta.machine = signal::kAllMachines[m];
        meta.condition = signal::Condition::normal;
        Rng rng(derive_seed(0xbac0, "backend-template",
                            m * kRefClips + static_cast<std::uint64_t>(i)));
        meta.attributes = signal::detail::draw_attributes(
            meta.machine, meta.condition, 3, rng);
        meta.seed = rng.next_u64();
        const auto clip = signal::synthesize(meta, 1.0, 16000);
        const auto profile = builtin_embed(clip);
        if (acc.empty()) acc.assign(profile.size(), 0.0);
        for (std::size_t b = 0; b < profile.size(); ++b)
          acc[b] += profile[b] / kRefClips;
      }
      templates_[m] = std::move(acc);
    }
  }

  const std::string& id() const { return id_; }

  std::vector<double> embed(const signal::AudioClip& clip) const {
    return builtin_embed(clip);
  }

  std::vector<double> classify(const signal::AudioClip& clip) const {
    const auto profile = builtin_embed(clip);
    std::array<double, 5> score{};
    for (std::size_t m = 0; m < 5; ++m)
      score[m] = correlation(profile, templates_[m]) / 0.05;
    const double mx = *std::max_element(score.begin(), score.end());
    double sum = 0.0;
    std::vector<double> probs(5);
    for (std::size_t m = 0; m < 5; ++m) {
      probs[m] = std::exp(score[m] - mx);
      sum += probs[m];
    }
    for (auto& p : probs) p /= sum;
    return probs;
  }

 private:
  static double correlation(const std::vector<double>& a,
                            const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      num += (a[i] - ma) * (b[i] - mb);
      da += (a[i] - ma) * (a[i] - ma);
      db += (b[i] - mb) * (b[i] - mb);
    }
    if (da <= 0.0 || db <= 0.0) return 0.0;
    return num / std::sqrt(da * db);
  }

  std::string id_ = "builtin-logmel-v1";
  std::array<std::vector<double>, 5> templates_;
};

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

struct MetricReport {
  double fad = 0.0;
  double kl = 0.0;
  double is_score = 0.0;
  double clap_original = 0.0;
  double clap_generated = 0.0;
  std::string backend;
  std::size_t real_count = 0;
  std::size_t generated_count = 0;
};

inline nlohmann::ordered_json report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["backend"] = r.backend;
  j["fad"] = r.fad;
  j["kl"] = r.kl;
  j["is"] = r.is_score;
  j["clap_original"] = r.clap_original;
  j["clap_generated"] = r.clap_generated;
  j["real_count"] = r.real_count;
  j["generated_count"] = r.generated_count;
  return j;
}

inline MetricReport from_report_json(const nlohmann::json& j) {
  MetricReport r;
  r.fad = j.at("fad").get<double>();
  r.kl = j.at("kl").get<double>();
  r.is_score = j.at("is").get<double>();
  r.clap_original = j.at("clap_original").get<double>();
  r.clap_generated = j.at("clap_generated").get<double>();
  r.backend = j.at("backend").get<std::string>();
  r.real_count = j.at("real_count").get<std::size_t>();
  r.generated_count = j.at("generated_count").get<std::size_t>();
  return r;
}

/// Runs all four metrics over two manifests. KL pairs generated clip i with
/// real clip i, so the manifests must be index-aligned and equal length.
inline MetricReport evaluate_generation(
    const std::vector<manifest::Record>& real_records,
    const std::string& real_dir,
    const std::vector<manifest::Record>& gen_records,
    const std::string& gen_dir, const BuiltinBackend& backend) {
  namespace fs = std::filesystem;
  require(!real_records.empty() && !gen_records.empty(),
          "evaluate_generation needs non-empty manifests");

  auto load = [&](const manifest::Record& rec, const std::string& dir) {
    try {
      return signal::read_wav((fs::path(dir) / rec.path).string());
    } catch (const Error& e) {
      fail("clip '" + rec.path + "': " + e.what());
    }
  };
  auto caption_of = [](const manifest::Record& rec) {
    return rec.caption.empty()
               ? caption::caption_from_metadata(
                     signal::metadata_from_manifest(rec))
                     .text
               : rec.caption;
  };

  std::vector<std::vector<double>> real_embeds, gen_embeds;
  std::vector<std::vector<double>> real_text, gen_text;
  ClassDistribution real_cls, gen_cls;
  for (const auto& rec : real_records) {
    const auto clip = load(rec, real_dir);
    real_embeds.push_back(backend.embed(clip));
    real_cls.probs.push_back(backend.classify(clip));
    real_text.push_back(project_text(caption::encode_text(caption_of(rec))));
  }
  for (const auto& rec : gen_records) {
    const auto clip = load(rec, gen_dir);
    gen_embeds.push_back(backend.embed(clip));
    gen_cls.probs.push_back(backend.classify(clip));
    gen_text.push_back(project_text(caption::encode_text(caption_of(rec))));
  }

  MetricReport report;
  report.backend = backend.id();
  report.real_count = real_records.size();
  report.generated_count = gen_records.size();
  report.fad = fad(compute_stats(real_embeds), compute_stats(gen_embeds));
  require(gen_records.size() == real_records.size(),
          "KL pairing needs equally sized manifests");
  report.kl = kl_divergence(gen_cls, real_cls);
  report.is_score = inception_score(gen_cls);
  report.clap_original = clap_style_score(real_embeds, real_text);
  report.clap_generated = clap_style_score(gen_embeds, gen_text);
  return report;
}

}  // namespace machgen::metrics
