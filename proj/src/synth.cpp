// SPDX-License-Identifier: Apache-2.0
#include "ceil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ceil/dataset.hpp"

namespace ceilc {

namespace {

// 5x7 glyph bitmaps, row-major, one string per digit.
const char* kGlyphs[10] = {
    "01110"
    "10001"
    "10011"
    "10101"
    "11001"
    "10001"
    "01110",
    "00100"
    "01100"
    "00100"
    "00100"
    "00100"
    "00100"
    "01110",
    "01110"
    "10001"
    "00001"
    "00010"
    "00100"
    "01000"
    "11111",
    "11111"
    "00010"
    "00100"
    "00010"
    "00001"
    "10001"
    "01110",
    "00010"
    "00110"
    "01010"
    "10010"
    "11111"
    "00010"
    "00010",
    "11111"
    "10000"
    "11110"
    "00001"
    "00001"
    "10001"
    "01110",
    "00110"
    "01000"
    "10000"
    "11110"
    "10001"
    "10001"
    "01110",
    "11111"
    "00001"
    "00010"
    "00100"
    "01000"
    "01000"
    "01000",
    "01110"
    "10001"
    "10001"
    "01110"
    "10001"
    "10001"
    "01110",
    "01110"
    "10001"
    "10001"
    "01111"
    "00001"
    "00010"
    "01100",
};

constexpr int kSide = 28;

struct Rng {
  std::mt19937 gen;
  explicit Rng(std::uint32_t seed) : gen(seed) {}
  double uniform() { return (gen() >> 8) * (1.0 / 16777216.0); }
  int range(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform() * (hi - lo + 1)) % (hi - lo + 1);
  }
  double normal() {
    double u1 = std::max(uniform(), 1e-12), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

std::vector<std::uint8_t> render(int digit, Rng& rng) {
  std::vector<std::uint8_t> img(kSide * kSide, 0);
  const char* glyph = kGlyphs[digit];

  int tw = rng.range(11, 18);  // target glyph size
  int th = rng.range(16, 23);
  int ox = rng.range(1, kSide - tw - 1);
  int oy = rng.range(1, kSide - th - 1);
  double shear = (rng.uniform() - 0.5) * 0.45;  // italic slant
  int base = rng.range(130, 255);

  for (int y = 0; y < th; ++y) {
    int gy = y * 7 / th;
    int dx = static_cast<int>(std::lround(shear * (y - th / 2)));
    for (int x = 0; x < tw; ++x) {
      int gx = x * 5 / tw;
      if (glyph[gy * 5 + gx] != '1') continue;
      int px = ox + x + dx, py = oy + y;
      if (px < 0 || px >= kSide || py < 0 || py >= kSide) continue;
      int v = base - rng.range(0, 40);
      img[static_cast<size_t>(py) * kSide + px] = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }
  }
  // sensor-style noise everywhere
  for (auto& p : img) {
    int v = static_cast<int>(p) + static_cast<int>(std::lround(rng.normal() * 22.0));
    p = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
  // distractor speckles
  int speckles = rng.range(4, 12);
  for (int s = 0; s < speckles; ++s) {
    int px = rng.range(0, kSide - 1), py = rng.range(0, kSide - 1);
    img[static_cast<size_t>(py) * kSide + px] = static_cast<std::uint8_t>(rng.range(90, 230));
  }
  return img;
}

void make_split(int n, Rng& rng, std::vector<std::uint8_t>& pixels,
                std::vector<std::uint8_t>& labels) {
  pixels.reserve(static_cast<size_t>(n) * kSide * kSide);
  labels.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int digit = i % 10;  // balanced classes
    auto img = render(digit, rng);
    pixels.insert(pixels.end(), img.begin(), img.end());
    labels.push_back(static_cast<std::uint8_t>(digit));
  }
}

}  // namespace

std::vector<std::uint8_t> render_digit(int digit, std::uint32_t seed) {
  Rng rng(seed);
  return render(digit % 10, rng);
}

void write_digit_dataset(const std::string& dir, int n_train, int n_test, std::uint32_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> px, lb;
  make_split(n_train, rng, px, lb);
  write_idx_images(dir + "/train-images-idx3-ubyte", px, n_train, kSide, kSide);
  write_idx_labels(dir + "/train-labels-idx1-ubyte", lb);
  px.clear();
  lb.clear();
  make_split(n_test, rng, px, lb);
  write_idx_images(dir + "/t10k-images-idx3-ubyte", px, n_test, kSide, kSide);
  write_idx_labels(dir + "/t10k-labels-idx1-ubyte", lb);
}

}  // namespace ceilc
