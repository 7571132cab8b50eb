// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ceil/errors.hpp"

namespace ceilc {

/// Dense rank-N array of 32-bit floats in row-major order (last index
/// fastest). Tensors are plain values: copyable, movable, immutable by
/// convention once handed to an operation.
class Tensor {
public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<int> shape);

  Tensor(std::vector<int> shape, std::vector<float> data);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  float& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Index helpers for the common ranks.
  float& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  float at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  float& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  float at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k];
  }
  float& at(int i, int j, int k, int l) {
    return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  float at(int i, int j, int k, int l) const {
    return data_[((static_cast<size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  /// Same data, new shape; element counts must match.
  Tensor reshaped(std::vector<int> new_shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  std::string shape_str() const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// Cross-correlation of x [batch,c_i,h,w] with w [c_o,c_i,p,p].
/// Output spatial size (h + 2*pad - p)/stride + 1 must divide exactly.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad);

/// Gradients of sum(grad_out . conv2d_forward(x, w)) w.r.t. x, w and bias.
ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w, int stride,
                          int pad);

/// [c,m,n] -> [c, m*n] (channel rows).
Tensor reshape_fm(const Tensor& x);
/// [c, m*n] -> [c,m,n]; exact inverse of reshape_fm.
Tensor unreshape_fm(const Tensor& xm, int m, int n);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

namespace detail {
// f32 in / f32 out matrix product with f64 accumulation.
void gemm(const float* a, const float* b, float* out, int p, int q, int r);
}  // namespace detail

}  // namespace ceilc
