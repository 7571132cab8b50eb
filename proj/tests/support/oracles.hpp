// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations the tests check the library against.
// Everything here is deliberately written the slow, obvious way and kept
// free of the library's internal code paths (loops instead of im2col,
// two-sided eigenvalue Jacobi on the Gram matrix instead of the one-sided
// production routine, f64 throughout).
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ceil/tensor.hpp"

namespace oracle {

inline double urand(std::mt19937& rng) { return (rng() >> 8) * (1.0 / 16777216.0); }

inline ceilc::Tensor random_tensor(std::vector<int> shape, std::mt19937& rng, double lo = -1.0,
                                  double hi = 1.0) {
  ceilc::Tensor t(shape);
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(lo + (hi - lo) * urand(rng));
  return t;
}

// Six nested loops, f64 accumulation.
inline ceilc::Tensor loop_conv2d(const ceilc::Tensor& x, const ceilc::Tensor& w,
                                const ceilc::Tensor* bias, int stride, int pad) {
  int B = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int co = w.dim(0), p = w.dim(2);
  int oh = (h + 2 * pad - p) / stride + 1;
  int ow = (wd + 2 * pad - p) / stride + 1;
  ceilc::Tensor out({B, co, oh, ow});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < co; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int c = 0; c < ci; ++c)
            for (int ki = 0; ki < p; ++ki)
              for (int kj = 0; kj < p; ++kj) {
                int iy = oy * stride + ki - pad;
                int ix = ox * stride + kj - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<double>(x.at(b, c, iy, ix)) * w.at(o, c, ki, kj);
              }
          out.at(b, o, oy, ox) = static_cast<float>(acc);
        }
  return out;
}

inline ceilc::Tensor loop_matmul(const ceilc::Tensor& a, const ceilc::Tensor& b) {
  ceilc::Tensor out({a.dim(0), b.dim(1)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < b.dim(1); ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.dim(1); ++k)
        acc += static_cast<double>(a.at(i, k)) * b.at(k, j);
      out.at(i, j) = static_cast<float>(acc);
    }
  return out;
}

// Singular values of a via two-sided Jacobi eigenvalue iteration on the
// smaller Gram matrix, f64.
inline std::vector<double> gram_singular_values(const ceilc::Tensor& a) {
  int d1 = a.dim(0), d2 = a.dim(1);
  int n = std::min(d1, d2);
  std::vector<std::vector<double>> g(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n), 0.0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      if (d2 <= d1)  // G = A^T A
        for (int r = 0; r < d1; ++r) acc += static_cast<double>(a.at(r, i)) * a.at(r, j);
      else  // G = A A^T
        for (int c = 0; c < d2; ++c) acc += static_cast<double>(a.at(i, c)) * a.at(j, c);
      g[static_cast<size_t>(i)][static_cast<size_t>(j)] = acc;
    }
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(g[p][q]));
    if (off < 1e-14) break;
    for (int p = 0; p < n - 1; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(g[p][q]) < 1e-300) continue;
        double theta = 0.5 * std::atan2(2.0 * g[p][q], g[q][q] - g[p][p]);
        double c = std::cos(theta), s = std::sin(theta);
        for (int i = 0; i < n; ++i) {
          double gip = g[i][p], giq = g[i][q];
          g[i][p] = c * gip - s * giq;
          g[i][q] = s * gip + c * giq;
        }
        for (int i = 0; i < n; ++i) {
          double gpi = g[p][i], gqi = g[q][i];
          g[p][i] = c * gpi - s * gqi;
          g[q][i] = s * gpi + c * gqi;
        }
      }
  }
  std::vector<double> sv(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) sv[static_cast<size_t>(i)] = std::sqrt(std::max(0.0, g[i][i]));
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

inline double fro_norm(const ceilc::Tensor& t) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) acc += static_cast<double>(t[i]) * t[i];
  return std::sqrt(acc);
}

inline double max_abs_diff(const ceilc::Tensor& a, const ceilc::Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

// Central finite differences of f around x, step h, evaluated per element.
inline ceilc::Tensor finite_diff(const std::function<double(const ceilc::Tensor&)>& f, ceilc::Tensor x,
                                double h = 1e-3) {
  ceilc::Tensor g(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    float orig = x[i];
    x[i] = static_cast<float>(orig + h);
    double fp = f(x);
    x[i] = static_cast<float>(orig - h);
    double fm = f(x);
    x[i] = orig;
    g[i] = static_cast<float>((fp - fm) / (2.0 * h));
  }
  return g;
}

// Normalized max error: max|a-b| / (max|b| + eps). The suite-level reading
// of "within tol relative" that is robust to single near-zero entries.
inline double rel_max_err(const ceilc::Tensor& got, const ceilc::Tensor& want) {
  double scale = 1e-12;
  for (std::int64_t i = 0; i < want.size(); ++i)
    scale = std::max(scale, std::abs(static_cast<double>(want[i])));
  return max_abs_diff(got, want) / scale;
}

}  // namespace oracle
