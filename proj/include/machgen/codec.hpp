// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "machgen/common.hpp"
#include "machgen/dsp.hpp"
#include "machgen/signalgen.hpp"
#include "machgen/tensor.hpp"

namespace machgen::codec {

// Frame grid: hop of 320 samples at 24 kHz, so a 10 s clip is exactly 750
// frames. Analysis: resample to 9.6 kHz (one frame = 128 samples) and take
// an orthonormal DCT-II per frame; the transform keeps all 128 coefficients,
// so the only round-trip loss is the 4.8 kHz resampling band limit.
inline constexpr std::size_t kLatentDim = 128;
inline constexpr std::size_t kHop24 = 320;
inline constexpr std::size_t kChannels = 16;
inline constexpr std::size_t kRowsPerChannel = 8;
inline constexpr int kCodecRate = 24000;
inline constexpr int kAnalysisRate = 9600;

enum class Layout { flat, diffusion };

struct LatentTensor {
  Layout layout = Layout::flat;
  std::size_t frames = 0;
  bool normalized = false;
  Tensor values;  // flat: (128, F); diffusion: (16, 8, F)

  static LatentTensor make_flat(std::size_t f) {
    LatentTensor t;
    t.layout = Layout::flat;
    t.frames = f;
    t.values = Tensor({kLatentDim, f});
    return t;
  }
  static LatentTensor make_diffusion(std::size_t f, bool normalized_) {
    LatentTensor t;
    t.layout = Layout::diffusion;
    t.frames = f;
    t.normalized = normalized_;
    t.values = Tensor({kChannels, kRowsPerChannel, f});
    return t;
  }
};

struct NormStats {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> stddev{};

  static NormStats identity() {
    NormStats s;
    s.mean.fill(0.0);
    s.stddev.fill(1.0);
    return s;
  }

  void validate() const {
    for (std::size_t c = 0; c < kChannels; ++c) {
      require(std::isfinite(mean[c]) && std::isfinite(stddev[c]),
              "non-finite normalization stats");
      require(stddev[c] > 0.0, "normalization std must be > 0");
    }
  }
};

// ===========================================================================
// Analysis / synthesis
// ===========================================================================

namespace detail {
inline const dsp::Dct& frame_dct() {
  static const dsp::Dct dct(kLatentDim);
  return dct;
}
}  // namespace detail

inline LatentTensor encode(const signal::AudioClip& clip) {
  std::vector<double> s24;
  if (clip.sample_rate == kCodecRate) {
    s24 = clip.samples;
  } else if (clip.sample_rate == 16000) {
    s24 = dsp::resample(clip.samples, 3, 2);
  } else {
    fail("codec encode expects 16 kHz or 24 kHz input, got " +
         std::to_string(clip.sample_rate));
  }
  const std::size_t f_count = s24.size() / kHop24;
  require(f_count >= 1, "clip shorter than one codec hop");
  const std::vector<double> s96 = dsp::resample(s24, 2, 5);
  require(s96.size() >= f_count * kLatentDim, "resampled clip too short");

  LatentTensor lat = LatentTensor::make_flat(f_count);
  std::array<double, kLatentDim> coeff{};
  for (std::size_t f = 0; f < f_count; ++f) {
    detail::frame_dct().forward(&s96[f * kLatentDim], coeff.data());
    for (std::size_t r = 0; r < kLatentDim; ++r)
      lat.values.at(r, f) = coeff[r];
  }
  return lat;
}

inline signal::AudioClip decode(const LatentTensor& lat) {
  require(lat.layout == Layout::flat, "decode expects a flat latent");
  require(!lat.normalized, "decode expects an unnormalized latent");
  std::vector<double> s96(lat.frames * kLatentDim);
  std::array<double, kLatentDim> coeff{};
  for (std::size_t f = 0; f < lat.frames; ++f) {
    for (std::size_t r = 0; r < kLatentDim; ++r)
      coeff[r] = lat.values.at(r, f);
    detail::frame_dct().inverse(coeff.data(), &s96[f * kLatentDim]);
  }
  signal::AudioClip clip;
  clip.sample_rate = kCodecRate;
  clip.samples = dsp::resample(s96, 5, 2);
  for (auto& s : clip.samples) s = std::clamp(s, -1.0, 1.0);
  return clip;
}

// ===========================================================================
// Residual vector quantization
// ===========================================================================

struct CodebookSet {
  std::size_t n_stages = 0;
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> data;  // n_stages * k * dim

  const double* word(std::size_t stage, std::size_t idx) const {
    return &data[(stage * k + idx) * dim];
  }
  double* word_mut(std::size_t stage, std::size_t idx) {
    return &data[(stage * k + idx) * dim];
  }

  void validate() const {
    require(n_stages >= 1 && k >= 1 && dim >= 1, "empty codebook set");
    require(data.size() == n_stages * k * dim, "codebook size mismatch");
    for (double x : data)
      require(std::isfinite(x), "non-finite codeword value");
  }
};

/// EnCodec-style bandwidth ladder. 24 kbps is the production default.
inline std::size_t stages_for_bandwidth(double kbps) {
  if (kbps == 1.5) return 2;
  if (kbps == 3.0) return 4;
  if (kbps == 6.0) return 8;
  if (kbps == 12.0) return 16;
  if (kbps == 24.0) return 32;
  fail("unsupported bandwidth (choose 1.5, 3, 6, 12 or 24 kbps)");
}

struct RvqIndices {
  std::size_t stages = 0;
  std::size_t frames = 0;
  std::vector<std::uint32_t> idx;  // stage-major: idx[stage * frames + f]

  std::uint32_t at(std::size_t stage, std::size_t f) const {
    return idx[stage * frames + f];
  }
};

namespace detail {

inline std::uint32_t nearest_word(const double* v, const CodebookSet& books,
                                  std::size_t stage) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < books.k; ++j) {
    const double* w = books.word(stage, j);
    double d = 0.0;
    for (std::size_t i = 0; i < books.dim; ++i) {
      const double t = v[i] - w[i];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(j);
    }
  }
  return best;
}

}  // namespace detail

/// Quantizes frame vectors (column-major view: frame f is values[i][f]).
/// Stage i encodes the residual left by stages 0..i-1.
inline RvqIndices rvq_quantize_frames(const Tensor& frames_matrix,
                                      const CodebookSet& books) {
  require(frames_matrix.shape.size() == 2, "rvq expects a 2-d matrix");
  require(frames_matrix.dim(0) == books.dim,
          "latent dimension does not match codebook dimension");
  const std::size_t f_count = frames_matrix.dim(1);
  RvqIndices out;
  out.stages = books.n_stages;
  out.frames = f_count;
  out.idx.resize(books.n_stages * f_count);
  std::vector<double> residual(books.dim);
  for (std::size_t f = 0; f < f_count; ++f) {
    for (std::size_t i = 0; i < books.dim; ++i)
      residual[i] = frames_matrix.at(i, f);
    for (std::size_t s = 0; s < books.n_stages; ++s) {
      const std::uint32_t j = detail::nearest_word(residual.data(), books, s);
      out.idx[s * f_count + f] = j;
      const double* w = books.word(s, j);
      for (std::size_t i = 0; i < books.dim; ++i) residual[i] -= w[i];
    }
  }
  return out;
}

inline Tensor rvq_dequantize_frames(const RvqIndices& indices,
                                    const CodebookSet& books) {
  require(indices.stages == books.n_stages, "stage count mismatch");
  Tensor out({books.dim, indices.frames});
  for (std::size_t f = 0; f < indices.frames; ++f) {
    for (std::size_t s = 0; s < books.n_stages; ++s) {
      const std::uint32_t j = indices.at(s, f);
      require(j < books.k, "codebook index out of range");
      const double* w = books.word(s, j);
      for (std::size_t i = 0; i < books.dim; ++i) out.at(i, f) += w[i];
    }
  }
  return out;
}

inline RvqIndices rvq_quantize(const LatentTensor& lat,
                               const CodebookSet& books) {
  require(lat.layout == Layout::flat, "rvq_quantize expects a flat latent");
  return rvq_quantize_frames(lat.values, books);
}

inline LatentTensor rvq_dequantize(const RvqIndices& indices,
                                   const CodebookSet& books) {
  require(books.dim == kLatentDim,
          "latent dequantize requires dim-128 codebooks");
  LatentTensor lat = LatentTensor::make_flat(indices.frames);
  lat.values = rvq_dequantize_frames(indices, books);
  return lat;
}

// ===========================================================================
// Codebook training: stage-wise k-means on residuals, fixed iterations,
// deterministic under the given seed.
// ===========================================================================

inline CodebookSet train_codebooks_frames(const Tensor& frames_matrix,
                                          std::size_t n_stages, std::size_t k,
                                          std::uint64_t seed,
                                          int iterations = 20) {
  require(frames_matrix.shape.size() == 2, "expected a 2-d frame matrix");
  const std::size_t dim = frames_matrix.dim(0);
  const std::size_t n = frames_matrix.dim(1);
  require(n >= k, "need at least K frames to train K codewords");
  require(n_stages >= 1 && k >= 1, "invalid codebook configuration");

  CodebookSet books;
  books.n_stages = n_stages;
  books.k = k;
  books.dim = dim;
  books.data.assign(n_stages * k * dim, 0.0);

  // column-major residual buffer: residuals[f * dim + i]
  std::vector<double> residuals(n * dim);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t i = 0; i < dim; ++i)
      residuals[f * dim + i] = frames_matrix.at(i, f);

  Rng rng(hash_mix(seed, hash_str("rvq-kmeans")));
  std::vector<std::uint32_t> assign(n, 0);
  std::vector<std::size_t> counts(k, 0);

  for (std::size_t stage = 0; stage < n_stages; ++stage) {
    // init with k distinct sample indices
    std::vector<std::size_t> picks;
    while (picks.size() < k) {
      const std::size_t cand = static_cast<std::size_t>(rng.below(n));
      bool dup = false;
      for (std::size_t p : picks) dup |= (p == cand);
      if (!dup) picks.push_back(cand);
    }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t i = 0; i < dim; ++i)
        books.word_mut(stage, j)[i] = residuals[picks[j] * dim + i];

    for (int it = 0; it < iterations; ++it) {
      for (std::size_t f = 0; f < n; ++f) {
        std::uint32_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
          const double* w = books.word(stage, j);
          double d = 0.0;
          const double* r = &residuals[f * dim];
          for (std::size_t i = 0; i < dim; ++i) {
            const double t = r[i] - w[i];
            d += t * t;
          }
          if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint32_t>(j);
          }
        }
        assign[f] = best;
      }
      std::fill(counts.begin(), counts.end(), 0);
      std::vector<double> sums(k * dim, 0.0);
      for (std::size_t f = 0; f < n; ++f) {
        counts[assign[f]]++;
        const double* r = &residuals[f * dim];
        double* s = &sums[assign[f] * dim];
        for (std::size_t i = 0; i < dim; ++i) s[i] += r[i];
      }
      for (std::size_t j = 0; j < k; ++j) {
        if (counts[j] == 0) {
          // revive an empty cluster at the residual farthest from its centroid
          std::size_t far_f = 0;
          double far_d = -1.0;
          for (std::size_t f = 0; f < n; ++f) {
            const double* w = books.word(stage, assign[f]);
            const double* r = &residuals[f * dim];
            double d = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
              const double t = r[i] - w[i];
              d += t * t;
            }
            if (d > far_d) {
              far_d = d;
              far_f = f;
            }
          }
          for (std::size_t i = 0; i < dim; ++i)
            books.word_mut(stage, j)[i] = residuals[far_f * dim + i];
        } else {
          const double inv = 1.0 / static_cast<double>(counts[j]);
          for (std::size_t i = 0; i < dim; ++i)
            books.word_mut(stage, j)[i] = sums[j * dim + i] * inv;
        }
      }
    }
    // Reserve a silence codeword: with an exact zero word present, the
    // nearest-word rule can never increase a residual, so stage-wise
    // refinement is monotone for every frame. Skipped for tiny toy
    // codebooks (k < 4) where each centroid is accounted for analytically.
    if (k >= 4) {
      std::size_t min_j = 0;
      double min_norm = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double* w = books.word(stage, j);
        double nrm = 0.0;
        for (std::size_t i = 0; i < dim; ++i) nrm += w[i] * w[i];
        if (nrm < min_norm) {
          min_norm = nrm;
          min_j = j;
        }
      }
      for (std::size_t i = 0; i < dim; ++i) books.word_mut(stage, min_j)[i] = 0.0;
    }
    // final assignment, then peel this stage off the residuals
    for (std::size_t f = 0; f < n; ++f) {
      double* r = &residuals[f * dim];
      const std::uint32_t j = detail::nearest_word(r, books, stage);
      const double* w = books.word(stage, j);
      for (std::size_t i = 0; i < dim; ++i) r[i] -= w[i];
    }
  }
  return books;
}

inline CodebookSet train_codebooks(const std::vector<LatentTensor>& latents,
                                   std::size_t n_stages, std::size_t k,
                                   std::uint64_t seed, int iterations = 20,
                                   std::size_t max_frames = 60000) {
  require(!latents.empty(), "no latents to train codebooks on");
  std::size_t total = 0;
  for (const auto& l : latents) {
    require(l.layout == Layout::flat && !l.normalized,
            "codebooks train on unnormalized flat latents");
    total += l.frames;
  }
  // deterministic stride subsample to bound the k-means cost
  const std::size_t stride = total > max_frames ? (total + max_frames - 1) / max_frames : 1;
  const std::size_t kept = (total + stride - 1) / stride;
  Tensor frames({kLatentDim, kept});
  std::size_t global = 0, out_f = 0;
  for (const auto& l : latents)
    for (std::size_t f = 0; f < l.frames; ++f, ++global) {
      if (global % stride != 0) continue;
      for (std::size_t r = 0; r < kLatentDim; ++r)
        frames.at(r, out_f) = l.values.at(r, f);
      ++out_f;
    }
  require(out_f == kept, "frame subsample bookkeeping error");
  return train_codebooks_frames(frames, n_stages, k, seed, iterations);
}

// ===========================================================================
// Reshape + per-channel normalization (fully reversible)
// ===========================================================================

inline LatentTensor reshape_to_diffusion(const LatentTensor& flat,
                                         const NormStats& stats) {
  require(flat.layout == Layout::flat, "reshape_to_diffusion expects flat");
  require(!flat.normalized, "latent is already normalized");
  require(flat.values.dim(0) == kLatentDim, "flat latent must have 128 rows");
  stats.validate();
  LatentTensor out = LatentTensor::make_diffusion(flat.frames, true);
  for (std::size_t r = 0; r < kLatentDim; ++r) {
    const std::size_t c = r / kRowsPerChannel;
    const std::size_t row = r % kRowsPerChannel;
    const double mu = stats.mean[c];
    const double inv = 1.0 / stats.stddev[c];
    for (std::size_t f = 0; f < flat.frames; ++f)
      out.values.at(c, row, f) = (flat.values.at(r, f) - mu) * inv;
  }
  return out;
}

inline LatentTensor reshape_to_flat(const LatentTensor& dif,
                                    const NormStats& stats) {
  require(dif.layout == Layout::diffusion, "reshape_to_flat expects diffusion");
  stats.validate();
  LatentTensor out = LatentTensor::make_flat(dif.frames);
  for (std::size_t r = 0; r < kLatentDim; ++r) {
    const std::size_t c = r / kRowsPerChannel;
    const std::size_t row = r % kRowsPerChannel;
    const double mu = stats.mean[c];
    const double sd = stats.stddev[c];
    for (std::size_t f = 0; f < dif.frames; ++f)
      out.values.at(r, f) = dif.values.at(c, row, f) * sd + mu;
  }
  return out;
}

/// Per-channel mean and population std over a set of flat latents
/// (the training split). Channel c covers flat rows [8c, 8c+8).
inline NormStats compute_norm_stats(const std::vector<LatentTensor>& flats) {
  require(!flats.empty(), "no latents for normalization stats");
  std::array<double, kChannels> sum{}, sum_sq{};
  std::array<std::size_t, kChannels> count{};
  for (const auto& l : flats) {
    require(l.layout == Layout::flat && !l.normalized,
            "stats are computed on unnormalized flat latents");
    for (std::size_t r = 0; r < kLatentDim; ++r) {
      const std::size_t c = r / kRowsPerChannel;
      for (std::size_t f = 0; f < l.frames; ++f) {
        const double x = l.values.at(r, f);
        sum[c] += x;
        sum_sq[c] += x * x;
        count[c] += 1;
      }
    }
  }
  NormStats stats;
  for (std::size_t c = 0; c < kChannels; ++c) {
    require(count[c] > 0, "empty channel in normalization stats");
    const double n = static_cast<double>(count[c]);
    stats.mean[c] = sum[c] / n;
    const double var = std::max(sum_sq[c] / n - stats.mean[c] * stats.mean[c], 0.0);
    require(var > 0.0, "channel " + std::to_string(c) +
                           " has zero variance; cannot normalize");
    stats.stddev[c] = std::sqrt(var);
  }
  return stats;
}

}  // namespace machgen::codec
