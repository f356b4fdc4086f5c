// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "machgen/dsp.hpp"

using namespace machgen;

namespace {

std::vector<double> sine(double freq, int sr, std::size_t n, double amp = 0.5,
                         double phase = 0.3) {
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i)
    y[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / sr + phase);
  return y;
}

double interior_snr(const std::vector<double>& ref,
                    const std::vector<double>& test, std::size_t margin) {
  REQUIRE(ref.size() == test.size());
  REQUIRE(ref.size() > 2 * margin);
  double sig = 0.0, err = 0.0;
  for (std::size_t i = margin; i + margin < ref.size(); ++i) {
    sig += ref[i] * ref[i];
    const double d = ref[i] - test[i];
    err += d * d;
  }
  return 10.0 * std::log10(sig / err);
}

}  // namespace

TEST_CASE("bessel and kaiser basics") {
  CHECK(dsp::bessel_i0(0.0) == doctest::Approx(1.0));
  CHECK(dsp::kaiser(0.0, 10.0) == doctest::Approx(1.0));
  CHECK(dsp::kaiser(1.0, 10.0) == doctest::Approx(1.0 / dsp::bessel_i0(10.0)));
  CHECK(dsp::kaiser(1.5, 10.0) == 0.0);
}

TEST_CASE("resample 16k to 24k reproduces a sine") {
  const auto x = sine(440.0, 16000, 8000);
  const auto y = dsp::resample(x, 3, 2);
  CHECK(y.size() == 12000);
  const auto ref = sine(440.0, 24000, 12000);
  CHECK(interior_snr(ref, y, 200) > 60.0);
}

TEST_CASE("resample down-up round trip keeps band-limited content") {
  const auto x = sine(1000.0, 24000, 24000);
  const auto down = dsp::resample(x, 2, 5);
  CHECK(down.size() == 9600);
  const auto up = dsp::resample(down, 5, 2);
  CHECK(up.size() == 24000);
  CHECK(interior_snr(x, up, 400) > 55.0);
}

TEST_CASE("resample is linear and maps zero to zero") {
  std::vector<double> zeros(4000, 0.0);
  for (double v : dsp::resample(zeros, 3, 2)) CHECK(v == 0.0);

  Rng rng(7);
  std::vector<double> x(4000);
  for (auto& v : x) v = rng.normal();
  auto y1 = dsp::resample(x, 3, 2);
  std::vector<double> x2(x);
  for (auto& v : x2) v *= -2.5;
  auto y2 = dsp::resample(x2, 3, 2);
  for (std::size_t i = 0; i < y1.size(); ++i)
    CHECK(y2[i] == doctest::Approx(-2.5 * y1[i]).epsilon(1e-12));
}

TEST_CASE("fft matches a naive DFT oracle") {
  const std::size_t n = 256;
  Rng rng(11);
  std::vector<double> re(n), im(n, 0.0);
  for (auto& v : re) v = rng.normal();
  const std::vector<double> re0 = re, im0 = im;
  dsp::fft_radix2(re, im);
  // naive DFT, written independently of the implementation under test
  for (std::size_t k = 0; k < n; k += 37) {
    double sr = 0.0, si = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double ang = -2.0 * M_PI * static_cast<double>(k * j) / n;
      sr += re0[j] * std::cos(ang) - im0[j] * std::sin(ang);
      si += re0[j] * std::sin(ang) + im0[j] * std::cos(ang);
    }
    CHECK(re[k] == doctest::Approx(sr).epsilon(1e-9));
    CHECK(im[k] == doctest::Approx(si).epsilon(1e-9));
  }
}

TEST_CASE("dct round trip is exact and orthonormal") {
  const std::size_t n = 128;
  dsp::Dct dct(n);
  Rng rng(3);
  std::vector<double> x(n), c(n), back(n);
  for (auto& v : x) v = rng.normal();
  dct.forward(x.data(), c.data());
  dct.inverse(c.data(), back.data());
  double energy_x = 0.0, energy_c = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-12));
    energy_x += x[i] * x[i];
    energy_c += c[i] * c[i];
  }
  CHECK(energy_c == doctest::Approx(energy_x).epsilon(1e-12));  // Parseval
}

TEST_CASE("fir lowpass separates pass and stop bands") {
  const int sr = 16000;
  const auto pass = sine(1000.0, sr, 8000);
  const auto stop = sine(6000.0, sr, 8000);
  const auto pass_f = dsp::fir_lowpass(pass, 4000.0 / sr);
  const auto stop_f = dsp::fir_lowpass(stop, 4000.0 / sr);
  double pass_e = 0.0, stop_e = 0.0;
  for (std::size_t i = 500; i + 500 < pass_f.size(); ++i) {
    pass_e += pass_f[i] * pass_f[i];
    stop_e += stop_f[i] * stop_f[i];
  }
  CHECK(interior_snr(pass, pass_f, 500) > 50.0);  // passband untouched
  CHECK(stop_e < pass_e * 1e-8);                  // stopband crushed
}

TEST_CASE("log mel frames have the right shape and silence floor") {
  std::vector<double> silence(16000, 0.0);
  const Tensor m = dsp::log_mel_frames(silence, 16000);
  CHECK(m.dim(0) == (16000 - 1024) / 512 + 1);
  CHECK(m.dim(1) == 64);
  for (double v : m.v) CHECK(v == doctest::Approx(std::log(1e-10)));
  CHECK_THROWS_AS(dsp::log_mel_frames(std::vector<double>(100, 0.0), 16000),
                  Error);
}

TEST_CASE("log mel responds to tone frequency") {
  const auto lo = sine(300.0, 16000, 16000);
  const auto hi = sine(3000.0, 16000, 16000);
  const Tensor ml = dsp::log_mel_frames(lo, 16000);
  const Tensor mh = dsp::log_mel_frames(hi, 16000);
  // band with max mean energy moves up
  auto argmax_band = [](const Tensor& m) {
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t b = 0; b < m.dim(1); ++b) {
      double acc = 0.0;
      for (std::size_t f = 0; f < m.dim(0); ++f) acc += m.at(f, b);
      if (acc > best_v) {
        best_v = acc;
        best = b;
      }
    }
    return best;
  };
  CHECK(argmax_band(mh) > argmax_band(ml));
}
