// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "ceil/dataset.hpp"
#include "ceil/network.hpp"
#include "ceil/planner.hpp"

namespace ceilc {

struct TrainConfig {
  float lr = 0.01f;
  int epochs_per_insertion = 4;
  int final_epochs = 20;
  int baseline_epochs = 10;
  int batch_size = 64;
  int plateau_patience = 3;
  float plateau_factor = 0.5f;
  std::uint32_t seed = 1;
  float momentum = 0.9f;
  double val_fraction = 0.1;
  bool tie_projections = false;
  std::string init = "svd";  // svd | pca | random

  void check() const;
};

/// Snapshot of a training run: network (with projections, if any),
/// optimizer momentum buffers, and selection metadata.
struct Checkpoint {
  NetworkGraph net;
  std::map<std::string, Tensor> momentum;  // keyed by parameter name
  int epoch = 0;
  int stage = 0;  // insertion stage index; 0 = baseline
  float val_accuracy = 0.0f;
};

/// Replay of the reduce-on-plateau schedule over a validation-accuracy
/// history: the rate is multiplied by plateau_factor after plateau_patience
/// epochs without an improvement > 1e-4, floored at 1e-6.
float reduce_on_plateau(const std::vector<float>& history, const TrainConfig& cfg);

/// Fraction of argmax-correct predictions.
float evaluate(const NetworkGraph& net, const LabeledDataset& ds, int batch_size = 256);

/// One SGD-with-momentum step; updates only trainable parameters.
void sgd_step(NetworkGraph& net, const GradMap& grads, std::map<std::string, Tensor>& momentum,
              float lr, float mu);

/// Supervised training of every trainable parameter; returns the
/// best-validation checkpoint. Writes per-epoch CSV lines to `log` if given.
Checkpoint train_baseline(const NetworkGraph& net, const LabeledDataset& train_set,
                          const TrainConfig& cfg, std::ostream* log = nullptr);

/// The progressive schedule: freeze the base, insert the planned projection
/// sites one by one in graph order (epochs_per_insertion each, every inserted
/// projection trainable, restarting from the best checkpoint of the stage),
/// then final_epochs of end-to-end projection training. Returns the best
/// checkpoint of the fully inserted configuration; base parameters are
/// bit-identical to the input.
Checkpoint progressive_compress(const Checkpoint& base, const CeilingPlan& plan,
                                const LabeledDataset& train_set, const TrainConfig& cfg,
                                std::ostream* log = nullptr);

/// Projection initialization per cfg.init for one site of `net`.
/// Sample maps for pca come from the first training batch.
struct SiteInit {
  std::string site;
  int k;
};
NetworkGraph insert_initialized_projection(const NetworkGraph& net, const SiteInit& si,
                                           const std::string& init, const LabeledDataset& sample_source,
                                           std::uint32_t seed);

}  // namespace ceilc
