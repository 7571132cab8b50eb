// SPDX-License-Identifier: Apache-2.0
#include "ceil/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace ceilc {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr long long kCifarRecord = 3073;
constexpr long long kCifarBatchBytes = 10000 * kCifarRecord;

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4))
    throw IoError("unexpected end of file while reading " + path);
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_be32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

std::vector<std::uint8_t> read_idx_images(const std::string& path, int* n, int* h, int* w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::uint32_t magic = read_be32(f, path);
  if (magic != kIdxImagesMagic)
    throw FormatError("bad magic in " + path + ": got 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }() + ", expected 0x00000803");
  *n = static_cast<int>(read_be32(f, path));
  *h = static_cast<int>(read_be32(f, path));
  *w = static_cast<int>(read_be32(f, path));
  std::vector<std::uint8_t> pixels(static_cast<size_t>(*n) * *h * *w);
  if (!f.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size())))
    throw IoError("truncated image payload in " + path);
  return pixels;
}

std::vector<std::uint8_t> read_idx_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::uint32_t magic = read_be32(f, path);
  if (magic != kIdxLabelsMagic)
    throw FormatError("bad magic in " + path + ": expected 0x00000801");
  int n = static_cast<int>(read_be32(f, path));
  std::vector<std::uint8_t> labels(static_cast<size_t>(n));
  if (!f.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size())))
    throw IoError("truncated label payload in " + path);
  return labels;
}

LabeledDataset from_u8(const std::vector<std::uint8_t>& pixels,
                       const std::vector<std::uint8_t>& labels, int n, int c, int h, int w,
                       const std::string& name) {
  if (labels.size() != static_cast<size_t>(n))
    throw FormatError(name + ": " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(n) + " images");
  LabeledDataset ds;
  ds.name = name;
  ds.num_classes = 10;
  ds.images = Tensor({n, c, h, w});
  for (std::int64_t i = 0; i < ds.images.size(); ++i)
    ds.images[i] = static_cast<float>(pixels[static_cast<size_t>(i)]) / 255.0f;
  ds.labels.assign(labels.begin(), labels.end());
  return ds;
}

// Stats from the train split only, applied to both splits.
void normalize_pair(DatasetPair& pair) {
  LabeledDataset& tr = pair.train;
  int c = tr.images.dim(1);
  std::int64_t per = tr.images.size() / c;  // elements per channel across the split
  std::vector<double> mean(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
  int n = tr.images.dim(0);
  std::int64_t chw = tr.images.size() / n;
  std::int64_t hw = chw / c;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const float* p = tr.images.data() + i * chw + ch * hw;
      for (std::int64_t t = 0; t < hw; ++t) mean[static_cast<size_t>(ch)] += p[t];
    }
  for (int ch = 0; ch < c; ++ch) mean[static_cast<size_t>(ch)] /= static_cast<double>(per);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const float* p = tr.images.data() + i * chw + ch * hw;
      for (std::int64_t t = 0; t < hw; ++t) {
        double d = p[t] - mean[static_cast<size_t>(ch)];
        var[static_cast<size_t>(ch)] += d * d;
      }
    }
  std::vector<float> m(static_cast<size_t>(c)), s(static_cast<size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    m[static_cast<size_t>(ch)] = static_cast<float>(mean[static_cast<size_t>(ch)]);
    s[static_cast<size_t>(ch)] =
        static_cast<float>(std::max(std::sqrt(var[static_cast<size_t>(ch)] / static_cast<double>(per)), 1e-6));
  }
  for (LabeledDataset* ds : {&pair.train, &pair.test}) {
    if (ds->normalized) continue;
    int nn = ds->images.dim(0);
    std::int64_t dchw = nn ? ds->images.size() / nn : 0;
    std::int64_t dhw = c ? dchw / c : 0;
    for (int i = 0; i < nn; ++i)
      for (int ch = 0; ch < c; ++ch) {
        float* p = ds->images.data() + i * dchw + ch * dhw;
        for (std::int64_t t = 0; t < dhw; ++t)
          p[t] = (p[t] - m[static_cast<size_t>(ch)]) / s[static_cast<size_t>(ch)];
      }
    ds->mean = m;
    ds->stddev = s;
    ds->normalized = true;
  }
}

}  // namespace

DatasetPair load_mnist(const std::string& dir) {
  DatasetPair pair;
  int n, h, w;
  {
    auto px = read_idx_images(dir + "/train-images-idx3-ubyte", &n, &h, &w);
    auto lb = read_idx_labels(dir + "/train-labels-idx1-ubyte");
    pair.train = from_u8(px, lb, n, 1, h, w, "mnist-train");
  }
  {
    auto px = read_idx_images(dir + "/t10k-images-idx3-ubyte", &n, &h, &w);
    auto lb = read_idx_labels(dir + "/t10k-labels-idx1-ubyte");
    pair.test = from_u8(px, lb, n, 1, h, w, "mnist-test");
  }
  normalize_pair(pair);
  return pair;
}

DatasetPair load_cifar10(const std::string& dir) {
  auto read_batch = [&](const std::string& path, std::vector<std::uint8_t>& pixels,
                        std::vector<std::uint8_t>& labels) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open " + path);
    long long sz = static_cast<long long>(f.tellg());
    if (sz != kCifarBatchBytes)
      throw FormatError(path + " has " + std::to_string(sz) + " bytes, expected " +
                        std::to_string(kCifarBatchBytes));
    f.seekg(0);
    std::vector<std::uint8_t> buf(static_cast<size_t>(sz));
    if (!f.read(reinterpret_cast<char*>(buf.data()), sz)) throw IoError("read failed on " + path);
    for (long long r = 0; r < 10000; ++r) {
      const std::uint8_t* rec = buf.data() + r * kCifarRecord;
      labels.push_back(rec[0]);
      pixels.insert(pixels.end(), rec + 1, rec + kCifarRecord);
    }
  };

  DatasetPair pair;
  {
    std::vector<std::uint8_t> px, lb;
    for (int b = 1; b <= 5; ++b)
      read_batch(dir + "/data_batch_" + std::to_string(b) + ".bin", px, lb);
    pair.train = from_u8(px, lb, static_cast<int>(lb.size()), 3, 32, 32, "cifar10-train");
  }
  {
    std::vector<std::uint8_t> px, lb;
    read_batch(dir + "/test_batch.bin", px, lb);
    pair.test = from_u8(px, lb, static_cast<int>(lb.size()), 3, 32, 32, "cifar10-test");
  }
  normalize_pair(pair);
  return pair;
}

std::vector<std::vector<int>> batch_indices(int n, int batch_size, std::uint32_t seed,
                                            bool shuffle) {
  if (batch_size < 1) throw ParamError("batch_size must be >= 1");
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle) {
    // hand-rolled Fisher-Yates so the order is identical across platforms
    std::mt19937 rng(seed);
    for (int i = n - 1; i > 0; --i) {
      int j = static_cast<int>(rng() % static_cast<std::uint32_t>(i + 1));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
  }
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    int end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

Batch gather(const LabeledDataset& ds, const std::vector<int>& idx) {
  if (ds.size() == 0) throw DataError("dataset '" + ds.name + "' is empty");
  std::int64_t chw = ds.images.size() / ds.images.dim(0);
  Batch b;
  std::vector<int> shape = ds.images.shape();
  shape[0] = static_cast<int>(idx.size());
  b.images = Tensor(shape);
  b.labels.reserve(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(b.images.data() + static_cast<std::int64_t>(i) * chw,
                ds.images.data() + static_cast<std::int64_t>(idx[i]) * chw,
                static_cast<size_t>(chw) * sizeof(float));
    b.labels.push_back(ds.labels[static_cast<size_t>(idx[i])]);
  }
  return b;
}

std::pair<std::vector<int>, std::vector<int>> split_indices(int n, double tail_frac,
                                                            std::uint32_t seed) {
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::mt19937 rng(seed);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng() % static_cast<std::uint32_t>(i + 1));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  int tail = static_cast<int>(std::llround(n * tail_frac));
  tail = std::max(1, std::min(tail, n - 1));
  std::vector<int> head(order.begin(), order.end() - tail);
  std::vector<int> rest(order.end() - tail, order.end());
  std::sort(head.begin(), head.end());
  std::sort(rest.begin(), rest.end());
  return {head, rest};
}

LabeledDataset subset(const LabeledDataset& ds, const std::vector<int>& idx) {
  Batch b = gather(ds, idx);
  LabeledDataset out;
  out.images = std::move(b.images);
  out.labels = std::move(b.labels);
  out.num_classes = ds.num_classes;
  out.mean = ds.mean;
  out.stddev = ds.stddev;
  out.normalized = ds.normalized;
  out.name = ds.name + "-subset";
  return out;
}

void write_idx_images(const std::string& path, const std::vector<std::uint8_t>& pixels, int n,
                      int h, int w) {
  if (pixels.size() != static_cast<size_t>(n) * h * w)
    throw DimensionError("pixel buffer does not match n*h*w");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  write_be32(f, kIdxImagesMagic);
  write_be32(f, static_cast<std::uint32_t>(n));
  write_be32(f, static_cast<std::uint32_t>(h));
  write_be32(f, static_cast<std::uint32_t>(w));
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw IoError("write failed on " + path);
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  write_be32(f, kIdxLabelsMagic);
  write_be32(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!f) throw IoError("write failed on " + path);
}

void write_cifar_batch(const std::string& path, const std::vector<std::uint8_t>& records) {
  if (records.size() != static_cast<size_t>(kCifarBatchBytes))
    throw DimensionError("cifar batch must be exactly " + std::to_string(kCifarBatchBytes) + " bytes");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(records.data()), static_cast<std::streamsize>(records.size()));
  if (!f) throw IoError("write failed on " + path);
}

}  // namespace ceilc
