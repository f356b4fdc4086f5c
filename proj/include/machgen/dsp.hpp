// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "machgen/common.hpp"
#include "machgen/tensor.hpp"

namespace machgen::dsp {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

/// Zeroth-order modified Bessel function of the first kind (series form),
/// used by the Kaiser window.
inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double x2 = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= x2 / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-16 * sum) break;
  }
  return sum;
}

/// Kaiser window value at normalized position r in [-1, 1].
inline double kaiser(double r, double beta) {
  const double a = 1.0 - r * r;
  if (a < 0.0) return 0.0;
  return bessel_i0(beta * std::sqrt(a)) / bessel_i0(beta);
}

// ---------------------------------------------------------------------------
// Rational-ratio polyphase resampler. Windowed-sinc kernel on the virtual
// grid of rate fs*up; cutoff at the tighter of the input/output Nyquist.
// Zero-phase: output sample m is aligned with input time m*down/up.
// Linear and deterministic; edges are zero-padded.
// ---------------------------------------------------------------------------

struct ResampleKernel {
  int up = 1;
  int down = 1;
  int half = 0;              // kernel half-width in virtual samples
  std::vector<double> h;     // h[0..half], symmetric

  ResampleKernel(int up_, int down_, int zero_crossings = 24,
                 double beta = 10.0)
      : up(up_), down(down_) {
    require(up >= 1 && down >= 1, "resample ratio terms must be >= 1");
    const int m = std::max(up, down);
    half = zero_crossings * m;
    const double cutoff = 0.5 / static_cast<double>(m);
    h.resize(static_cast<std::size_t>(half) + 1);
    for (int n = 0; n <= half; ++n) {
      const double r = static_cast<double>(n) / static_cast<double>(half);
      h[static_cast<std::size_t>(n)] =
          2.0 * cutoff * sinc(2.0 * cutoff * n) * kaiser(r, beta);
    }
  }

  double tap(long n) const {
    const long a = n < 0 ? -n : n;
    return a > half ? 0.0 : h[static_cast<std::size_t>(a)];
  }
};

inline std::vector<double> resample(const std::vector<double>& x, int up,
                                    int down) {
  if (up == down) return x;
  const ResampleKernel k(up, down);
  const long in_len = static_cast<long>(x.size());
  const long out_len =
      static_cast<long>((static_cast<unsigned long long>(x.size()) *
                         static_cast<unsigned long long>(up)) /
                        static_cast<unsigned long long>(down));
  std::vector<double> y(static_cast<std::size_t>(out_len), 0.0);
  const double gain = static_cast<double>(up);
  for (long m = 0; m < out_len; ++m) {
    const long center = m * down;  // virtual position of output sample
    const long lo = center - k.half;
    long j0 = lo <= 0 ? 0 : (lo + up - 1) / up;
    long j1 = std::min((center + k.half) / up, in_len - 1);
    double acc = 0.0;
    for (long j = j0; j <= j1; ++j)
      acc += x[static_cast<std::size_t>(j)] * k.tap(center - j * up);
    y[static_cast<std::size_t>(m)] = gain * acc;
  }
  return y;
}

/// Zero-phase windowed-sinc lowpass, cutoff in cycles/sample (0, 0.5).
inline std::vector<double> fir_lowpass(const std::vector<double>& x,
                                       double cutoff, int half_width = 96,
                                       double beta = 9.0) {
  require(cutoff > 0.0 && cutoff < 0.5, "fir_lowpass cutoff out of range");
  std::vector<double> h(static_cast<std::size_t>(half_width) + 1);
  for (int n = 0; n <= half_width; ++n) {
    const double r = static_cast<double>(n) / static_cast<double>(half_width);
    h[static_cast<std::size_t>(n)] =
        2.0 * cutoff * sinc(2.0 * cutoff * n) * kaiser(r, beta);
  }
  const long len = static_cast<long>(x.size());
  std::vector<double> y(x.size(), 0.0);
  for (long i = 0; i < len; ++i) {
    double acc = x[static_cast<std::size_t>(i)] * h[0];
    for (int n = 1; n <= half_width; ++n) {
      const long lo = i - n, hi = i + n;
      double s = 0.0;
      if (lo >= 0) s += x[static_cast<std::size_t>(lo)];
      if (hi < len) s += x[static_cast<std::size_t>(hi)];
      acc += s * h[static_cast<std::size_t>(n)];
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Radix-2 FFT (in-place, complex interleaved as two arrays).
// ---------------------------------------------------------------------------

inline void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  require(n == im.size() && n > 0 && (n & (n - 1)) == 0,
          "fft size must be a power of two");
  // bit reversal
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::size_t a = i + j, b = i + j + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Orthonormal DCT-II / DCT-III pair with a precomputed basis table.
// Used per frame by the codec; O(N^2) is fine at N = 128.
// ---------------------------------------------------------------------------

struct Dct {
  std::size_t n = 0;
  std::vector<double> basis;  // basis[k*n + i] = s_k cos(pi (2i+1) k / 2n)

  explicit Dct(std::size_t n_) : n(n_), basis(n_ * n_) {
    const double s0 = std::sqrt(1.0 / static_cast<double>(n));
    const double sk = std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        basis[k * n + i] = (k == 0 ? s0 : sk) *
                           std::cos(M_PI * (2.0 * i + 1.0) * k /
                                    (2.0 * static_cast<double>(n)));
  }

  void forward(const double* x, double* out) const {
    for (std::size_t k = 0; k < n; ++k) {
      const double* row = &basis[k * n];
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += row[i] * x[i];
      out[k] = acc;
    }
  }

  // Transpose of forward; exact inverse since the basis is orthonormal.
  void inverse(const double* c, double* out) const {
    for (std::size_t i = 0; i < n; ++i) out[i] = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double* row = &basis[k * n];
      const double ck = c[k];
      for (std::size_t i = 0; i < n; ++i) out[i] += ck * row[i];
    }
  }
};

// ---------------------------------------------------------------------------
// Log-mel spectrogram. HTK mel scale, triangular filters, Hann window.
// ---------------------------------------------------------------------------

constexpr double kLogMelFloor = 1e-10;

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

struct MelBank {
  std::size_t n_fft = 1024;
  std::size_t n_mels = 64;
  int sample_rate = 16000;
  // weights[m * bins + k] over the one-sided spectrum (bins = n_fft/2 + 1)
  std::vector<double> weights;

  MelBank(int sr, std::size_t n_fft_, std::size_t n_mels_, double fmax = 0.0)
      : n_fft(n_fft_), n_mels(n_mels_), sample_rate(sr) {
    const std::size_t bins = n_fft / 2 + 1;
    weights.assign(n_mels * bins, 0.0);
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(fmax > 0.0 ? fmax : sr / 2.0);
    std::vector<double> edges(n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
      edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                        static_cast<double>(n_mels + 1));
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      for (std::size_t k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * sr /
                         static_cast<double>(n_fft);
        double w = 0.0;
        if (f > lo && f < mid)
          w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi)
          w = (hi - f) / (hi - mid);
        if (w > 0.0) weights[m * bins + k] = w;
      }
    }
  }
};

/// Log-mel frames: rows = frames, cols = mel bands. Frames shorter than one
/// window are rejected. fmax = 0 spans the full band to sr/2.
inline Tensor log_mel_frames(const std::vector<double>& samples, int sr,
                             std::size_t n_fft = 1024, std::size_t hop = 512,
                             std::size_t n_mels = 64, double fmax = 0.0) {
  require(samples.size() >= n_fft, "clip shorter than one analysis window");
  const MelBank bank(sr, n_fft, n_mels, fmax);
  const std::size_t bins = n_fft / 2 + 1;
  const std::size_t frames = (samples.size() - n_fft) / hop + 1;
  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                     static_cast<double>(n_fft));
  Tensor out({frames, n_mels});
  std::vector<double> re(n_fft), im(n_fft), power(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < n_fft; ++i) {
      re[i] = samples[f * hop + i] * window[i];
      im[i] = 0.0;
    }
    fft_radix2(re, im);
    for (std::size_t k = 0; k < bins; ++k)
      power[k] = re[k] * re[k] + im[k] * im[k];
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double* w = &bank.weights[m * bins];
      double acc = 0.0;
      for (std::size_t k = 0; k < bins; ++k) acc += w[k] * power[k];
      out.at(f, m) = std::log(acc + kLogMelFloor);
    }
  }
  return out;
}

inline double snr_db(const std::vector<double>& ref,
                     const std::vector<double>& test) {
  require(ref.size() == test.size(), "snr_db length mismatch");
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    sig += ref[i] * ref[i];
    const double d = ref[i] - test[i];
    err += d * d;
  }
  if (err == 0.0) return 300.0;
  return 10.0 * std::log10(sig / err);
}

}  // namespace machgen::dsp
