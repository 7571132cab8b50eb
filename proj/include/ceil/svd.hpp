// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "ceil/tensor.hpp"

namespace ceilc {

/// Rank-k factorization a ~= u * diag(sigma) * v^T with column-orthonormal
/// u [d1,k] and v [d2,k]; sigma is non-negative and non-increasing.
struct SvdResult {
  Tensor u;
  std::vector<float> sigma;
  Tensor v;
};

/// Best rank-k approximation of a [d1,d2] by one-sided Jacobi rotations,
/// run on the side with the smaller Gram matrix. Requires 1 <= k <= min(d1,d2).
/// Throws NumericalError if the sweep cap (100) is hit before convergence.
SvdResult truncated_svd(const Tensor& a, int k);

/// u * diag(sigma) * v^T, for residual checks.
Tensor svd_reconstruct(const SvdResult& r);

}  // namespace ceilc
