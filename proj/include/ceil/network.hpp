// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "ceil/tensor.hpp"

namespace ceilc {

enum class LayerKind {
  Conv2d,
  ReLU,
  MaxPool2x2,
  Dense,
  ResidualAdd,
  GlobalAvgPool,
  Flatten,
  SoftmaxXent,
  Projection,
  // Post-fold form of a projection: S1 only, output has k channels.
  Compress,
  // Shape-only kinds for the architecture catalogs (profiler path); they are
  // rejected by forward/backward.
  DepthwiseConv2d,
  MaxPool3x3s2,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);
bool layer_kind_executable(LayerKind k);

struct LayerSpec {
  LayerKind kind{};
  std::string name;
  int in_ch = 0;   // Conv2d/DepthwiseConv2d/Dense input width
  int out_ch = 0;  // Conv2d output channels
  int ksize = 0;   // square kernel size
  int stride = 1;
  int pad = 0;
  int units = 0;  // Dense output width
  int rank = 0;   // Projection/Compress rank k
  // Producer layer names; empty means "previous layer". ResidualAdd takes
  // two inputs (main path first, skip second). "input" is the reserved name
  // of the network input.
  std::vector<std::string> inputs;
};

struct Param {
  Tensor value;
  bool trainable = false;
};

/// Topologically ordered layer graph plus its parameter store. Parameters
/// are keyed "<layer>.w" / "<layer>.b" (Conv2d, Dense) and
/// "<layer>.s1" / "<layer>.s2" (Projection; Compress keeps only s1).
class NetworkGraph {
public:
  std::array<int, 3> input_shape{0, 0, 0};  // channels, height, width
  std::vector<LayerSpec> layers;
  std::map<std::string, Param> params;

  const LayerSpec* find(const std::string& name) const;
  int layer_index(const std::string& name) const;  // -1 if absent
  /// Consumers of each tensor (layer name or "input").
  std::map<std::string, std::vector<std::string>> consumer_map() const;
  /// Resolved input names of a layer (applies the previous-layer default).
  std::vector<std::string> resolved_inputs(int layer_idx) const;

  /// Structural checks: unique names, producers precede consumers, arity,
  /// positive attributes, end-to-end shape consistency.
  void validate() const;
};

/// Output (c,h,w) of every layer for the declared input shape; Dense,
/// Flatten and GlobalAvgPool outputs are reported as (n,1,1). Conv output
/// sizes floor, as in the standard shape rule.
std::map<std::string, std::array<int, 3>> infer_shapes(const NetworkGraph& net);

struct ForwardCache {
  bool valid = false;
  Tensor input;
  std::map<std::string, Tensor> values;                // retained activations
  std::map<std::string, std::vector<int>> pool_argmax; // per MaxPool2x2 layer
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

/// Runs the graph on batch [B,c,h,w] (or [B,n] for dense-only graphs).
/// With keep_cache the tensors backward needs are retained.
ForwardResult forward(const NetworkGraph& net, const Tensor& batch, bool keep_cache);

using GradMap = std::map<std::string, Tensor>;

/// Gradients of sum(loss_grad . logits) for every trainable parameter.
GradMap backward(const NetworkGraph& net, const ForwardCache& cache, const Tensor& loss_grad);

struct XentResult {
  float loss;
  Tensor grad;  // d(mean nll)/d(logits)
};

/// Mean negative log softmax probability of the true class per row.
XentResult softmax_xent(const Tensor& logits, const std::vector<int>& labels);

enum class StorageClass { Stored, Fused };

struct ActivationRecord {
  std::string site;      // public site name: head of the fused chain
  std::string producer;  // layer whose output is the materialized tensor
  int channels = 0;
  int m = 0;  // height
  int n = 0;  // width
  StorageClass storage_class = StorageClass::Stored;
};

/// Fusion-aware storage classes for every activation in the graph.
/// Conv+ReLU(+MaxPool2x2) chains with single-consumer intermediates keep
/// only the chain output; fan-out tensors are always Stored.
std::vector<ActivationRecord> classify_storage(const NetworkGraph& net);

/// Folds frozen batch-norm scale/shift (gamma, beta, running mean/var) into
/// conv weights and bias. Returns the adjusted (weights, bias).
std::pair<Tensor, Tensor> fold_batchnorm(const Tensor& w, const Tensor& bias, const Tensor& gamma,
                                         const Tensor& beta, const Tensor& mean, const Tensor& var,
                                         float eps);

}  // namespace ceilc
