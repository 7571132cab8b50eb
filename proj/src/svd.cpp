// SPDX-License-Identifier: Apache-2.0
#include "ceil/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ceilc {

namespace {

constexpr double kOffTol = 1e-10;  // relative off-diagonal threshold
constexpr int kMaxSweeps = 100;

// Hestenes one-sided Jacobi: orthogonalizes the nc columns of m (rows x nc,
// column-major storage here) while accumulating the rotations into v (nc x nc).
void jacobi_orthogonalize(std::vector<double>& m, std::vector<double>& v, int rows, int nc) {
  for (int i = 0; i < nc; ++i) v[static_cast<size_t>(i) * nc + i] = 1.0;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double max_off = 0.0;
    for (int p = 0; p < nc - 1; ++p) {
      for (int q = p + 1; q < nc; ++q) {
        double* cp = m.data() + static_cast<size_t>(p) * rows;
        double* cq = m.data() + static_cast<size_t>(q) * rows;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (int i = 0; i < rows; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        double off = std::abs(gamma) / std::sqrt(alpha * beta);
        max_off = std::max(max_off, off);
        if (off <= kOffTol) continue;
        double zeta = (beta - alpha) / (2.0 * gamma);
        double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        double cs = 1.0 / std::sqrt(1.0 + t * t);
        double sn = cs * t;
        for (int i = 0; i < rows; ++i) {
          double a = cp[i], b = cq[i];
          cp[i] = cs * a - sn * b;
          cq[i] = sn * a + cs * b;
        }
        double* vp = v.data() + static_cast<size_t>(p) * nc;
        double* vq = v.data() + static_cast<size_t>(q) * nc;
        for (int i = 0; i < nc; ++i) {
          double a = vp[i], b = vq[i];
          vp[i] = cs * a - sn * b;
          vq[i] = sn * a + cs * b;
        }
      }
    }
    if (max_off <= kOffTol) return;
  }
  throw NumericalError("truncated_svd did not converge within " + std::to_string(kMaxSweeps) +
                       " Jacobi sweeps");
}

// Fills column j of u (rows x k, column blocks of length `rows`) with a unit
// vector orthogonal to columns [0, j): canonical basis vector with the largest
// residual after Gram-Schmidt. Deterministic.
void fill_orthonormal(std::vector<double>& u, int rows, int j) {
  std::vector<double> best(rows, 0.0);
  double best_norm = -1.0;
  for (int cand = 0; cand < rows; ++cand) {
    std::vector<double> e(rows, 0.0);
    e[cand] = 1.0;
    for (int c = 0; c < j; ++c) {
      const double* uc = u.data() + static_cast<size_t>(c) * rows;
      double dot = 0.0;
      for (int i = 0; i < rows; ++i) dot += e[i] * uc[i];
      for (int i = 0; i < rows; ++i) e[i] -= dot * uc[i];
    }
    double norm = std::sqrt(std::inner_product(e.begin(), e.end(), e.begin(), 0.0));
    if (norm > best_norm) {
      best_norm = norm;
      best = std::move(e);
    }
    if (best_norm > 0.9) break;  // good enough, keep the earliest such candidate
  }
  double* uj = u.data() + static_cast<size_t>(j) * rows;
  for (int i = 0; i < rows; ++i) uj[i] = best[i] / best_norm;
}

}  // namespace

SvdResult truncated_svd(const Tensor& a, int k) {
  if (a.rank() != 2) throw DimensionError("truncated_svd expects a matrix, got " + a.shape_str());
  const int d1 = a.dim(0), d2 = a.dim(1);
  if (k < 1 || k > std::min(d1, d2))
    throw ParamError("truncated_svd rank k=" + std::to_string(k) + " out of range [1," +
                     std::to_string(std::min(d1, d2)) + "]");

  const bool transposed = d2 > d1;  // work on the side with fewer columns
  const int rows = transposed ? d2 : d1;
  const int nc = transposed ? d1 : d2;

  // Column-major copy of the working matrix (a or a^T).
  std::vector<double> m(static_cast<size_t>(rows) * nc);
  for (int c = 0; c < nc; ++c)
    for (int r = 0; r < rows; ++r)
      m[static_cast<size_t>(c) * rows + r] =
          transposed ? a.at(c, r) : a.at(r, c);

  std::vector<double> vacc(static_cast<size_t>(nc) * nc, 0.0);
  jacobi_orthogonalize(m, vacc, rows, nc);

  std::vector<double> norms(nc);
  double sig_max = 0.0;
  for (int c = 0; c < nc; ++c) {
    const double* col = m.data() + static_cast<size_t>(c) * rows;
    norms[c] = std::sqrt(std::inner_product(col, col + rows, col, 0.0));
    sig_max = std::max(sig_max, norms[c]);
  }
  std::vector<int> order(nc);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });

  // Left factor of the working matrix: normalized columns, zero-sigma columns
  // completed to an orthonormal set.
  const double tiny = sig_max * 1e-13;
  std::vector<double> uw(static_cast<size_t>(rows) * k, 0.0);
  for (int j = 0; j < k; ++j) {
    int c = order[j];
    if (norms[c] > tiny && norms[c] > 0.0) {
      const double* col = m.data() + static_cast<size_t>(c) * rows;
      double* uj = uw.data() + static_cast<size_t>(j) * rows;
      for (int i = 0; i < rows; ++i) uj[i] = col[i] / norms[c];
    } else {
      fill_orthonormal(uw, rows, j);
    }
  }

  SvdResult res;
  res.sigma.resize(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) {
    double s = norms[order[j]];
    res.sigma[static_cast<size_t>(j)] = static_cast<float>(s > tiny ? s : 0.0);
  }
  Tensor uwt({rows, k});
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < rows; ++i)
      uwt.at(i, j) = static_cast<float>(uw[static_cast<size_t>(j) * rows + i]);
  Tensor vwt({nc, k});
  for (int j = 0; j < k; ++j) {
    const double* vc = vacc.data() + static_cast<size_t>(order[j]) * nc;
    for (int i = 0; i < nc; ++i) vwt.at(i, j) = static_cast<float>(vc[i]);
  }
  if (transposed) {
    res.u = std::move(vwt);  // a = (m)^T = vacc * diag * uw^T
    res.v = std::move(uwt);
  } else {
    res.u = std::move(uwt);
    res.v = std::move(vwt);
  }
  return res;
}

Tensor svd_reconstruct(const SvdResult& r) {
  const int d1 = r.u.dim(0), d2 = r.v.dim(0);
  const int k = static_cast<int>(r.sigma.size());
  Tensor out({d1, d2});
  for (int i = 0; i < d1; ++i)
    for (int j = 0; j < d2; ++j) {
      double acc = 0.0;
      for (int c = 0; c < k; ++c)
        acc += static_cast<double>(r.u.at(i, c)) * r.sigma[static_cast<size_t>(c)] * r.v.at(j, c);
      out.at(i, j) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace ceilc
