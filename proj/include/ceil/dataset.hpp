// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ceil/tensor.hpp"

namespace ceilc {

/// Images plus labels for one split. Normalization stats always come from
/// the train split and are applied exactly once (tracked by `normalized`).
struct LabeledDataset {
  Tensor images;  // [N,c,h,w]
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<float> mean;    // per channel
  std::vector<float> stddev;  // per channel
  bool normalized = false;
  std::string name;

  int size() const { return images.empty() ? 0 : images.dim(0); }
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

/// MNIST IDX files (train-images-idx3-ubyte etc.) under `dir`. Values are
/// scaled to [0,1] and normalized with train-split stats.
DatasetPair load_mnist(const std::string& dir);

/// CIFAR-10 binary batches (data_batch_1..5.bin, test_batch.bin) under `dir`.
DatasetPair load_cifar10(const std::string& dir);

/// Deterministic batch order; the final partial batch is included.
std::vector<std::vector<int>> batch_indices(int n, int batch_size, std::uint32_t seed, bool shuffle);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather(const LabeledDataset& ds, const std::vector<int>& idx);

/// Iterator form of batch_indices + gather.
class BatchStream {
public:
  BatchStream(const LabeledDataset& ds, int batch_size, std::uint32_t seed, bool shuffle)
      : ds_(&ds), order_(batch_indices(ds.size(), batch_size, seed, shuffle)) {}
  std::optional<Batch> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    return gather(*ds_, order_[pos_++]);
  }
  size_t batch_count() const { return order_.size(); }

private:
  const LabeledDataset* ds_;
  std::vector<std::vector<int>> order_;
  size_t pos_ = 0;
};

/// Deterministic (seeded) split of a dataset into head/tail index sets;
/// used for the train/validation split.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double tail_frac,
                                                            std::uint32_t seed);
LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& idx);

// Writers for the exact on-disk formats (used by the synthetic dataset and
// round-trip tests).
void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels, int n,
                      int h, int w);
void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels);
void write_cifar_batch(const std::string& path, const std::vector<std::uint8_t>& records);

}  // namespace ceilc
