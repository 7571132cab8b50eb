// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ceil/network.hpp"
#include "ceil/tensor.hpp"

namespace ceilc {

/// Learnable channel projection attached to a stored activation: s1 [k,c]
/// compresses, s2 [c,k] lifts. Requires 1 <= k < c.
struct ProjectionPair {
  Tensor s1;
  Tensor s2;
  std::string site;
  int k = 0;
};

struct FoldResult {
  Tensor w_tilde;       // [c_o, k, p, p]
  Tensor s1_kept;       // [k, c]
  long long param_delta;  // element-count change: k*(p^2*c_o + c) - p^2*c_o*c
};

/// [c_o,c,p,p] -> [p^2*c_o, c]: rows enumerate (output channel, kernel row,
/// kernel col); columns are input channels.
Tensor reshape_w(const Tensor& w);

/// Analytic initialization from the next layer's weights: S1 = V_k^T,
/// S2 = V_k of the truncated SVD of the reshaped weights. The best rank-k
/// choice in Frobenius norm.
ProjectionPair svd_init(const Tensor& w_next, int k);

/// Initialization from sample activations: S2 = top-k eigenvectors of the
/// (uncentered) channel second-moment, S1 = S2^T.
ProjectionPair pca_init(const std::vector<Tensor>& sample_maps, int k);

/// Random orthonormal columns for S2 (S1 = S2^T); ablation baseline.
ProjectionPair random_init(int c, int k, std::uint32_t seed);

/// New graph computing the lifted projection at `pair.site` (a Stored
/// activation); only the projection's s1/s2 are trainable in the result.
NetworkGraph insert_projection(const NetworkGraph& net, const ProjectionPair& pair);

/// Inverse of insert_projection; restores the original wiring.
NetworkGraph remove_projection(const NetworkGraph& net, const std::string& site);

/// Absorbs the lift into the next convolution:
/// w_tilde[o,j,:,:] = sum_c w_next[o,c,:,:] * s2[c,j].
FoldResult fold_lift(const Tensor& w_next, const ProjectionPair& pair);

/// True iff k*(p^2*c_o + c_i) < p^2*c_o*c_i (exact integers): folded weights
/// plus S1 take fewer elements than the original kernel.
bool overhead_check(int p, int c_o, int c_i, long long k);

/// Inference form: every projection whose consumers are all convolutions is
/// replaced by a compress node and folded weights. Sites feeding dense or
/// residual-add consumers keep the explicit lift and require
/// allow_explicit_lift.
NetworkGraph fold_network(const NetworkGraph& net, bool allow_explicit_lift);

/// Name of the projection layer that insert_projection creates for a site.
std::string projection_layer_name(const std::string& site);

}  // namespace ceilc
