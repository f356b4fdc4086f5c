// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "machgen/common.hpp"

namespace machgen {

/// Dense row-major tensor of doubles. Rank is dynamic but in practice
/// everything in the pipeline is rank 1..4. Value semantics throughout.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    v.assign(count(shape), 0.0);
  }
  Tensor(std::initializer_list<std::size_t> s)
      : Tensor(std::vector<std::size_t>(s)) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }

  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  // Rank-specific accessors; the caller is responsible for matching rank.
  double& at(std::size_t i) { return v[i]; }
  double at(std::size_t i) const { return v[i]; }
  double& at(std::size_t i, std::size_t j) { return v[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return v[i * shape[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return v[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return v[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  Tensor& operator+=(const Tensor& o) {
    require(same_shape(o), "tensor shape mismatch in +=");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require(same_shape(o), "tensor shape mismatch in -=");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
    return *this;
  }
  Tensor& operator*=(double a) {
    for (auto& x : v) x *= a;
    return *this;
  }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline Tensor randn(std::vector<std::size_t> shape, Rng& rng,
                    double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.v) x = rng.normal() * scale;
  return t;
}

inline double mean_sq(const Tensor& t) {
  double s = 0.0;
  for (double x : t.v) s += x * x;
  return t.v.empty() ? 0.0 : s / static_cast<double>(t.v.size());
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "tensor shape mismatch in max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace machgen
