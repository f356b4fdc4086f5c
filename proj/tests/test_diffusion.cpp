// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "machgen/diffusion.hpp"

using namespace machgen;

namespace {

codec::LatentTensor random_z0(std::size_t frames, std::uint64_t seed,
                              double scale = 1.0) {
  auto z = codec::LatentTensor::make_diffusion(frames, true);
  Rng rng(seed);
  for (auto& v : z.values.v) v = rng.normal() * scale;
  return z;
}

}  // namespace

TEST_CASE("schedule hand values") {
  const auto one = diffusion::make_schedule(1, 0.5, 0.5);
  CHECK(one.alpha_bar_at(1) == doctest::Approx(0.5));

  const auto two = diffusion::make_schedule(2, 0.1, 0.3);
  CHECK(two.beta_at(1) == doctest::Approx(0.1));
  CHECK(two.beta_at(2) == doctest::Approx(0.3));
  CHECK(two.alpha_bar_at(1) == doctest::Approx(0.9));
  CHECK(two.alpha_bar_at(2) == doctest::Approx(0.63));

  CHECK_THROWS_AS(diffusion::make_schedule(0, 0.1, 0.2), Error);
  CHECK_THROWS_AS(diffusion::make_schedule(10, 0.0, 0.2), Error);
  CHECK_THROWS_AS(diffusion::make_schedule(10, 0.3, 0.2), Error);
  CHECK_THROWS_AS(diffusion::make_schedule(10, 0.1, 1.0), Error);
}

TEST_CASE("default schedule mixes to noise; pinned terminal alpha_bar") {
  const auto s = diffusion::make_schedule(diffusion::kDefaultSteps,
                                          diffusion::kDefaultBetaStart,
                                          diffusion::kDefaultBetaEnd);
  // computed once with this running product: alpha_bar_1000 = 4.03585e-05
  CHECK(s.alpha_bar_at(1000) == doctest::Approx(4.03585e-05).epsilon(1e-4));
  CHECK(s.alpha_bar_at(1000) < 0.01);

  // monotonicity and the Pythagorean identity of the coefficient pair
  for (std::size_t t = 1; t <= s.steps; ++t) {
    if (t > 1) {
      CHECK(s.beta_at(t) > s.beta_at(t - 1));
      CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    }
    const double a = std::sqrt(s.alpha_bar_at(t));
    const double b = std::sqrt(1.0 - s.alpha_bar_at(t));
    CHECK(std::abs(a * a + b * b - 1.0) <= 1e-12);
  }
}

TEST_CASE("forward noise: closed form, determinism, terminal statistics") {
  const auto s = diffusion::make_schedule(100, 1e-3, 0.09);
  const auto z0 = random_z0(8, 5, 2.0);

  // eps forced to zero -> z_t = sqrt(alpha_bar_t) z0 exactly
  Tensor zero_eps(z0.values.shape);
  const auto ns = diffusion::forward_noise_with(z0, 37, s, zero_eps);
  const double sa = std::sqrt(s.alpha_bar_at(37));
  for (std::size_t i = 0; i < z0.values.size(); ++i)
    CHECK(ns.z_t.values.v[i] == sa * z0.values.v[i]);

  // same rng seed twice -> identical eps
  Rng r1(99), r2(99);
  const auto n1 = diffusion::forward_noise(z0, 50, s, r1);
  const auto n2 = diffusion::forward_noise(z0, 50, s, r2);
  CHECK(n1.eps.v == n2.eps.v);
  CHECK(n1.z_t.values.v == n2.z_t.values.v);

  // t out of range
  Rng r3(1);
  CHECK_THROWS_AS(diffusion::forward_noise(z0, 0, s, r3), Error);
  CHECK_THROWS_AS(diffusion::forward_noise(z0, 101, s, r3), Error);

  // t = T with alpha_bar ~ 0: z_T is approximately standard normal
  const auto big = random_z0(80, 7, 1.0);  // 16*8*80 = 10240 elements
  Rng r4(123);
  const auto nT = diffusion::forward_noise(big, 100, s, r4);
  double mean = 0.0, var = 0.0;
  for (double v : nT.z_t.values.v) mean += v;
  mean /= static_cast<double>(nT.z_t.values.size());
  for (double v : nT.z_t.values.v) var += (v - mean) * (v - mean);
  var /= static_cast<double>(nT.z_t.values.size());
  CHECK(std::abs(mean) < 0.05);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("loss oracle values") {
  const auto s = diffusion::make_schedule(100, 1e-3, 0.09);
  const auto z0 = random_z0(16, 11);

  // a predictor that returns the injected eps exactly -> loss 0
  Tensor known_eps(z0.values.shape);
  Rng r(55);
  for (auto& v : known_eps.v) v = r.normal();
  const Tensor eps_copy = known_eps;
  const double zero_loss = diffusion::loss_with(
      z0, 10, s, known_eps,
      [&](const Tensor&, std::size_t) { return eps_copy; });
  CHECK(zero_loss == doctest::Approx(0.0).epsilon(1e-15));

  // the zero predictor's expected loss is 1 (mean of eps^2), independent of
  // the z0 scale; Monte Carlo over many draws
  auto zero_fn = [](const Tensor& z, std::size_t) { return Tensor(z.shape); };
  for (double scale : {1.0, 10.0}) {
    const auto z = random_z0(40, 17, scale);
    Rng mc(31337);
    double acc = 0.0;
    const int reps = 40;
    for (int i = 0; i < reps; ++i) {
      const std::size_t t = 1 + static_cast<std::size_t>(mc.below(100));
      acc += diffusion::loss(z, t, s, mc, zero_fn);
    }
    CHECK(acc / reps == doctest::Approx(1.0).epsilon(0.05));
  }

  // non-negative for random configurations
  Rng cfg_rng(2024);
  for (int i = 0; i < 100; ++i) {
    const auto z = random_z0(4, cfg_rng.next_u64());
    const std::size_t t = 1 + static_cast<std::size_t>(cfg_rng.below(100));
    Tensor pred(z.values.shape);
    for (auto& v : pred.v) v = cfg_rng.normal();
    const double l = diffusion::loss(
        z, t, s, cfg_rng, [&](const Tensor&, std::size_t) { return pred; });
    CHECK(l >= 0.0);
  }
}

TEST_CASE("ancestral sampling: one-step hand computation and determinism") {
  auto zero_fn = [](const Tensor& z, std::size_t) { return Tensor(z.shape); };

  // T = 1 with a zero-predicting denoiser: output = z_1 / sqrt(1 - beta_1),
  // where z_1 is the rng's initial normal draw
  const auto s1 = diffusion::make_schedule(1, 0.25, 0.25);
  Rng sampler(77);
  const auto out = diffusion::sample(s1, 4, sampler, zero_fn);
  Rng replay(77);
  const double inv = 1.0 / std::sqrt(1.0 - 0.25);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    CHECK(out.values.v[i] == doctest::Approx(replay.normal() * inv).epsilon(1e-15));

  // same seed twice -> identical samples (longer chain, nonzero predictor)
  const auto s = diffusion::make_schedule(50, 1e-3, 0.09);
  auto noisy_fn = [](const Tensor& z, std::size_t t) {
    Tensor out2(z.shape);
    for (std::size_t i = 0; i < z.size(); ++i)
      out2.v[i] = 0.1 * z.v[i] + 0.01 * static_cast<double>(t % 7);
    return out2;
  };
  Rng a(5), b(5);
  const auto sa = diffusion::sample(s, 8, a, noisy_fn);
  const auto sb = diffusion::sample(s, 8, b, noisy_fn);
  CHECK(sa.values.v == sb.values.v);
  CHECK(sa.layout == codec::Layout::diffusion);
  CHECK(sa.normalized);
}
