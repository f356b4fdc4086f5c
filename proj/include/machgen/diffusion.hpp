// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "machgen/codec.hpp"
#include "machgen/common.hpp"
#include "machgen/tensor.hpp"

namespace machgen::diffusion {

// Canonical DDPM defaults; desk-scale runs shorten the chain and widen the
// betas so the chain still mixes to noise (alpha_bar_T < 0.01).
inline constexpr std::size_t kDefaultSteps = 1000;
inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;

struct NoiseSchedule {
  std::size_t steps = 0;          // T
  std::vector<double> beta;       // beta[t-1], t = 1..T
  std::vector<double> alpha_bar;  // cumulative product of (1 - beta)

  double beta_at(std::size_t t) const { return beta[t - 1]; }
  double alpha_bar_at(std::size_t t) const { return alpha_bar[t - 1]; }
};

inline NoiseSchedule make_schedule(std::size_t steps, double beta_start,
                                   double beta_end) {
  require(steps >= 1, "schedule needs at least one step");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const double frac =
        steps == 1 ? 0.0
                   : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta[t - 1] = b;
    prod *= (1.0 - b);
    s.alpha_bar[t - 1] = prod;
  }
  return s;
}

struct NoisySample {
  codec::LatentTensor z_t;
  std::size_t t = 0;
  Tensor eps;  // the injected noise, same shape as z_t.values
};

namespace detail {
inline void check_z0(const codec::LatentTensor& z0) {
  require(z0.layout == codec::Layout::diffusion,
          "forward_noise expects a diffusion-layout latent");
  require(z0.normalized, "forward_noise expects a normalized latent");
}
}  // namespace detail

/// Closed-form forward process with the noise supplied by the caller:
/// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
inline NoisySample forward_noise_with(const codec::LatentTensor& z0,
                                      std::size_t t,
                                      const NoiseSchedule& schedule,
                                      Tensor eps) {
  detail::check_z0(z0);
  require(t >= 1 && t <= schedule.steps, "step t out of range");
  require(eps.same_shape(z0.values), "noise shape must match the latent");
  const double ab = schedule.alpha_bar_at(t);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  NoisySample out;
  out.z_t = z0;
  out.t = t;
  for (std::size_t i = 0; i < eps.size(); ++i)
    out.z_t.values.v[i] = sa * z0.values.v[i] + sn * eps.v[i];
  out.eps = std::move(eps);
  return out;
}

inline NoisySample forward_noise(const codec::LatentTensor& z0, std::size_t t,
                                 const NoiseSchedule& schedule, Rng& rng) {
  detail::check_z0(z0);
  Tensor eps(z0.values.shape);
  for (auto& x : eps.v) x = rng.normal();
  return forward_noise_with(z0, t, schedule, std::move(eps));
}

/// Noise predictor: eps_hat = f(z_t, t). The condition, parameters and
/// architecture are bound by the caller (see denoiser::eps_model).
using EpsFn = std::function<Tensor(const Tensor& z_t, std::size_t t)>;

/// Mean squared error between the injected and the predicted noise for one
/// (z0, t) pair; the expectation over t and eps is taken by the trainer.
inline double loss_with(const codec::LatentTensor& z0, std::size_t t,
                        const NoiseSchedule& schedule, Tensor eps,
                        const EpsFn& eps_fn) {
  NoisySample ns = forward_noise_with(z0, t, schedule, std::move(eps));
  const Tensor eps_hat = eps_fn(ns.z_t.values, t);
  require(eps_hat.same_shape(ns.eps), "denoiser output shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < ns.eps.size(); ++i) {
    const double d = ns.eps.v[i] - eps_hat.v[i];
    acc += d * d;
  }
  const double value = acc / static_cast<double>(ns.eps.size());
  require(std::isfinite(value), "non-finite diffusion loss");
  return value;
}

inline double loss(const codec::LatentTensor& z0, std::size_t t,
                   const NoiseSchedule& schedule, Rng& rng,
                   const EpsFn& eps_fn) {
  detail::check_z0(z0);
  Tensor eps(z0.values.shape);
  for (auto& x : eps.v) x = rng.normal();
  return loss_with(z0, t, schedule, std::move(eps), eps_fn);
}

/// Ancestral DDPM sampling from z_T ~ N(0, I):
///   z_{t-1} = (z_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(1 - beta_t)
///             + sqrt(beta_t) * xi,   xi = 0 at t = 1.
inline codec::LatentTensor sample(const NoiseSchedule& schedule,
                                  std::size_t frames, Rng& rng,
                                  const EpsFn& eps_fn) {
  codec::LatentTensor out = codec::LatentTensor::make_diffusion(frames, true);
  for (auto& x : out.values.v) x = rng.normal();
  for (std::size_t t = schedule.steps; t >= 1; --t) {
    const double b = schedule.beta_at(t);
    const double coef = b / std::sqrt(1.0 - schedule.alpha_bar_at(t));
    const double inv = 1.0 / std::sqrt(1.0 - b);
    const Tensor eps_hat = eps_fn(out.values, t);
    require(eps_hat.same_shape(out.values), "denoiser output shape mismatch");
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values.v[i] = inv * (out.values.v[i] - coef * eps_hat.v[i]);
    if (t > 1) {
      const double sb = std::sqrt(b);
      for (auto& x : out.values.v) x += sb * rng.normal();
    }
  }
  require(out.values.all_finite(), "non-finite sample");
  return out;
}

/// Ancestral sampling over an evenly strided subsequence of the chain.
/// With sample_steps equal to the full chain length this is exactly
/// sample(); with fewer steps each update folds the skipped betas into an
/// effective beta via the alpha_bar ratio.
inline codec::LatentTensor sample_strided(const NoiseSchedule& schedule,
                                          std::size_t frames, Rng& rng,
                                          const EpsFn& eps_fn,
                                          std::size_t sample_steps) {
  require(sample_steps >= 1 && sample_steps <= schedule.steps,
          "sample_steps must be in [1, T]");
  if (sample_steps == schedule.steps)
    return sample(schedule, frames, rng, eps_fn);
  codec::LatentTensor out = codec::LatentTensor::make_diffusion(frames, true);
  for (auto& x : out.values.v) x = rng.normal();
  for (std::size_t k = sample_steps; k >= 1; --k) {
    const std::size_t t =
        (k * schedule.steps + sample_steps / 2) / sample_steps;
    const std::size_t t_prev =
        k > 1 ? ((k - 1) * schedule.steps + sample_steps / 2) / sample_steps
              : 0;
    const double ab = schedule.alpha_bar_at(std::max<std::size_t>(t, 1));
    const double ab_prev = t_prev >= 1 ? schedule.alpha_bar_at(t_prev) : 1.0;
    const double beta_eff = 1.0 - ab / ab_prev;
    const double coef = beta_eff / std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(1.0 - beta_eff);
    const Tensor eps_hat = eps_fn(out.values, std::max<std::size_t>(t, 1));
    require(eps_hat.same_shape(out.values), "denoiser output shape mismatch");
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values.v[i] = inv * (out.values.v[i] - coef * eps_hat.v[i]);
    if (k > 1) {
      const double sb = std::sqrt(beta_eff);
      for (auto& x : out.values.v) x += sb * rng.normal();
    }
  }
  require(out.values.all_finite(), "non-finite sample");
  return out;
}

}  // namespace machgen::diffusion
