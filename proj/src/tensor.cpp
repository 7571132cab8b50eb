// SPDX-License-Identifier: Apache-2.0
#include "ceil/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace ceilc {

namespace {

std::int64_t checked_count(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(checked_count(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_count(shape_) != static_cast<std::int64_t>(data_.size()))
    throw DimensionError("tensor shape " + shape_str() + " does not match data length " +
                         std::to_string(data_.size()));
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
  if (checked_count(new_shape) != size())
    throw DimensionError("reshape element count mismatch: " + shape_str());
  Tensor t;
  t.shape_ = std::move(new_shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << "]";
  return os.str();
}

namespace detail {

void gemm(const float* a, const float* b, float* out, int p, int q, int r) {
  for (int i = 0; i < p; ++i) {
    const float* arow = a + static_cast<size_t>(i) * q;
    for (int j = 0; j < r; ++j) {
      double acc = 0.0;
      for (int k = 0; k < q; ++k) acc += static_cast<double>(arow[k]) * b[static_cast<size_t>(k) * r + j];
      out[static_cast<size_t>(i) * r + j] = static_cast<float>(acc);
    }
  }
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul expects rank-2 tensors, got " + a.shape_str() + " and " +
                         b.shape_str());
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul inner dimensions differ: " + a.shape_str() + " x " +
                         b.shape_str());
  Tensor out({a.dim(0), b.dim(1)});
  detail::gemm(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a rank-2 tensor, got " + a.shape_str());
  Tensor out({a.dim(1), a.dim(0)});
  for (int i = 0; i < a.dim(0); ++i)
    for (int j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor reshape_fm(const Tensor& x) {
  if (x.rank() != 3)
    throw DimensionError("reshape_fm expects a [c,m,n] tensor, got " + x.shape_str());
  return x.reshaped({x.dim(0), x.dim(1) * x.dim(2)});
}

Tensor unreshape_fm(const Tensor& xm, int m, int n) {
  if (xm.rank() != 2)
    throw DimensionError("unreshape_fm expects a [c,m*n] tensor, got " + xm.shape_str());
  if (xm.dim(1) != m * n)
    throw DimensionError("unreshape_fm count mismatch: " + xm.shape_str() + " vs m*n=" +
                         std::to_string(m * n));
  return xm.reshaped({xm.dim(0), m, n});
}

namespace {

struct ConvDims {
  int batch, ci, h, w;
  int co, p;
  int oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.rank() != 4)
    throw DimensionError("conv2d input must be [batch,c_i,h,w], got " + x.shape_str());
  if (w.rank() != 4)
    throw DimensionError("conv2d weights must be [c_o,c_i,p,p], got " + w.shape_str());
  if (w.dim(2) != w.dim(3))
    throw DimensionError("conv2d kernel must be square, got " + w.shape_str());
  if (x.dim(1) != w.dim(1))
    throw DimensionError("conv2d channel mismatch: input c_i=" + std::to_string(x.dim(1)) +
                         " vs weight c_i=" + std::to_string(w.dim(1)));
  if (stride < 1 || pad < 0) throw ConfigError("conv2d stride must be >=1 and pad >=0");
  ConvDims d{};
  d.batch = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.co = w.dim(0);
  d.p = w.dim(2);
  int num_h = d.h + 2 * pad - d.p;
  int num_w = d.w + 2 * pad - d.p;
  if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0)
    throw ConfigError("conv2d output size is not a positive integer for input " + x.shape_str() +
                      ", kernel p=" + std::to_string(d.p) + ", stride=" + std::to_string(stride) +
                      ", pad=" + std::to_string(pad));
  d.oh = num_h / stride + 1;
  d.ow = num_w / stride + 1;
  return d;
}

// Expands one batch item into the [ci*p*p, oh*ow] patch matrix.
void im2col(const float* x, const ConvDims& d, int stride, int pad, float* col) {
  const int ohw = d.oh * d.ow;
  for (int c = 0; c < d.ci; ++c) {
    const float* xc = x + static_cast<size_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.p; ++ki) {
      for (int kj = 0; kj < d.p; ++kj) {
        float* row = col + (static_cast<size_t>(c) * d.p * d.p + ki * d.p + kj) * ohw;
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * stride + ki - pad;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * stride + kj - pad;
            row[oy * d.ow + ox] = (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                                      ? xc[iy * d.w + ix]
                                      : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-adds a patch matrix back onto the (zero-initialized) input image.
void col2im(const float* col, const ConvDims& d, int stride, int pad, float* x) {
  const int ohw = d.oh * d.ow;
  for (int c = 0; c < d.ci; ++c) {
    float* xc = x + static_cast<size_t>(c) * d.h * d.w;
    for (int ki = 0; ki < d.p; ++ki) {
      for (int kj = 0; kj < d.p; ++kj) {
        const float* row = col + (static_cast<size_t>(c) * d.p * d.p + ki * d.p + kj) * ohw;
        for (int oy = 0; oy < d.oh; ++oy) {
          int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= d.h) continue;
          for (int ox = 0; ox < d.ow; ++ox) {
            int ix = ox * stride + kj - pad;
            if (ix < 0 || ix >= d.w) continue;
            xc[iy * d.w + ix] += row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad) {
  ConvDims d = conv_dims(x, w, stride, pad);
  if (bias && !(bias->rank() == 1 && bias->dim(0) == d.co))
    throw DimensionError("conv2d bias must be [c_o]=" + std::to_string(d.co) + ", got " +
                         bias->shape_str());
  const int cpp = d.ci * d.p * d.p;
  const int ohw = d.oh * d.ow;
  Tensor out({d.batch, d.co, d.oh, d.ow});
  std::vector<float> col(static_cast<size_t>(cpp) * ohw);
  for (int b = 0; b < d.batch; ++b) {
    im2col(x.data() + static_cast<size_t>(b) * d.ci * d.h * d.w, d, stride, pad, col.data());
    float* ob = out.data() + static_cast<size_t>(b) * d.co * ohw;
    // w viewed row-major as [c_o, ci*p*p] matches the im2col row order.
    detail::gemm(w.data(), col.data(), ob, d.co, cpp, ohw);
    if (bias) {
      for (int o = 0; o < d.co; ++o) {
        float bv = (*bias)[o];
        float* row = ob + static_cast<size_t>(o) * ohw;
        for (int i = 0; i < ohw; ++i) row[i] += bv;
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& w, int stride,
                          int pad) {
  ConvDims d = conv_dims(x, w, stride, pad);
  if (!(grad_out.rank() == 4 && grad_out.dim(0) == d.batch && grad_out.dim(1) == d.co &&
        grad_out.dim(2) == d.oh && grad_out.dim(3) == d.ow))
    throw DimensionError("conv2d_backward grad_out shape " + grad_out.shape_str() +
                         " does not match forward output [" + std::to_string(d.batch) + "," +
                         std::to_string(d.co) + "," + std::to_string(d.oh) + "," +
                         std::to_string(d.ow) + "]");
  const int cpp = d.ci * d.p * d.p;
  const int ohw = d.oh * d.ow;
  ConvGrads g;
  g.input = Tensor({d.batch, d.ci, d.h, d.w});
  g.weights = Tensor({d.co, d.ci, d.p, d.p});
  g.bias = Tensor({d.co});

  std::vector<float> col(static_cast<size_t>(cpp) * ohw);
  std::vector<double> gw(static_cast<size_t>(d.co) * cpp, 0.0);
  std::vector<double> gb(static_cast<size_t>(d.co), 0.0);
  std::vector<float> colgrad(static_cast<size_t>(cpp) * ohw);
  Tensor wt = transpose(w.reshaped({d.co, cpp}));  // [cpp, c_o]

  for (int b = 0; b < d.batch; ++b) {
    const float* go = grad_out.data() + static_cast<size_t>(b) * d.co * ohw;
    im2col(x.data() + static_cast<size_t>(b) * d.ci * d.h * d.w, d, stride, pad, col.data());
    // grad_w += grad_out_mat . col^T ; grad_bias += row sums
    for (int o = 0; o < d.co; ++o) {
      const float* gr = go + static_cast<size_t>(o) * ohw;
      double bacc = 0.0;
      for (int i = 0; i < ohw; ++i) bacc += gr[i];
      gb[o] += bacc;
      for (int k = 0; k < cpp; ++k) {
        const float* cr = col.data() + static_cast<size_t>(k) * ohw;
        double acc = 0.0;
        for (int i = 0; i < ohw; ++i) acc += static_cast<double>(gr[i]) * cr[i];
        gw[static_cast<size_t>(o) * cpp + k] += acc;
      }
    }
    // grad_x = col2im(w^T . grad_out_mat)
    detail::gemm(wt.data(), go, colgrad.data(), cpp, d.co, ohw);
    col2im(colgrad.data(), d, stride, pad,
           g.input.data() + static_cast<size_t>(b) * d.ci * d.h * d.w);
  }
  for (size_t i = 0; i < gw.size(); ++i) g.weights[static_cast<std::int64_t>(i)] = static_cast<float>(gw[i]);
  for (int o = 0; o < d.co; ++o) g.bias[o] = static_cast<float>(gb[o]);
  return g;
}

}  // namespace ceilc
