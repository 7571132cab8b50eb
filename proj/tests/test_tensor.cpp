// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "ceil/tensor.hpp"
#include "support/oracles.hpp"

using namespace ceilc;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d: 1x1 kernel scales the input") {
  Tensor x({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
  Tensor w({1, 1, 1, 1}, {2.0f});
  Tensor out = conv2d_forward(x, w, nullptr, 1, 0);
  CHECK(out.shape() == std::vector<int>{1, 1, 3, 3});
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(2.0f));
}

TEST_CASE("conv2d: zero input gives zero output") {
  Tensor x({1, 1, 2, 2});
  std::mt19937 rng(7);
  Tensor w = oracle::random_tensor({3, 1, 1, 1}, rng);
  Tensor out = conv2d_forward(x, w, nullptr, 1, 0);
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("conv2d: matches the loop oracle on a random padded case") {
  std::mt19937 rng(11);
  Tensor x = oracle::random_tensor({2, 3, 8, 8}, rng);
  Tensor w = oracle::random_tensor({4, 3, 3, 3}, rng);
  Tensor bias = oracle::random_tensor({4}, rng);
  Tensor got = conv2d_forward(x, w, &bias, 1, 1);
  Tensor want = oracle::loop_conv2d(x, w, &bias, 1, 1);
  CHECK(got.shape() == want.shape());
  CHECK(oracle::max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("conv2d: strided case matches the loop oracle") {
  std::mt19937 rng(13);
  Tensor x = oracle::random_tensor({1, 2, 9, 9}, rng);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor got = conv2d_forward(x, w, nullptr, 2, 0);
  Tensor want = oracle::loop_conv2d(x, w, nullptr, 2, 0);
  CHECK(got.shape() == std::vector<int>{1, 3, 4, 4});
  CHECK(oracle::max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("conv2d: shape errors name the offending axes") {
  Tensor x({1, 2, 4, 4});
  Tensor w({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d_forward(x, w, nullptr, 1, 1), DimensionError);
  Tensor w2({1, 2, 3, 3});
  // (4 - 3) / 2 is not an integer
  CHECK_THROWS_AS(conv2d_forward(x, w2, nullptr, 2, 0), ConfigError);
}

TEST_CASE("conv2d linearity in the input") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng);
    Tensor y = oracle::random_tensor({1, 2, 5, 5}, rng);
    Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
    float alpha = static_cast<float>(oracle::urand(rng) * 2 - 1);
    float beta = static_cast<float>(oracle::urand(rng) * 2 - 1);
    Tensor mix({1, 2, 5, 5});
    for (std::int64_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x[i] + beta * y[i];
    Tensor lhs = conv2d_forward(mix, w, nullptr, 1, 1);
    Tensor cx = conv2d_forward(x, w, nullptr, 1, 1);
    Tensor cy = conv2d_forward(y, w, nullptr, 1, 1);
    for (std::int64_t i = 0; i < lhs.size(); ++i)
      CHECK(std::abs(lhs[i] - (alpha * cx[i] + beta * cy[i])) < 1e-5);
  }
}

TEST_CASE("conv2d: 1x1 convolution equals a per-pixel matrix product") {
  std::mt19937 rng(19);
  Tensor x = oracle::random_tensor({2, 5, 4, 4}, rng);
  Tensor w = oracle::random_tensor({3, 5, 1, 1}, rng);
  Tensor conv = conv2d_forward(x, w, nullptr, 1, 0);
  Tensor wmat = w.reshaped({3, 5});
  for (int b = 0; b < 2; ++b) {
    Tensor item({5, 4, 4});
    for (std::int64_t i = 0; i < item.size(); ++i) item[i] = x[b * item.size() + i];
    Tensor per_pixel = unreshape_fm(matmul(wmat, reshape_fm(item)), 4, 4);
    for (std::int64_t i = 0; i < per_pixel.size(); ++i)
      CHECK(std::abs(conv[b * per_pixel.size() + i] - per_pixel[i]) < 1e-6);
  }
}

TEST_CASE("conv2d_backward: zero cotangent gives zero gradients") {
  std::mt19937 rng(23);
  Tensor x = oracle::random_tensor({1, 2, 4, 4}, rng);
  Tensor w = oracle::random_tensor({2, 2, 3, 3}, rng);
  Tensor gz({1, 2, 4, 4});
  ConvGrads g = conv2d_backward(gz, x, w, 1, 1);
  for (std::int64_t i = 0; i < g.input.size(); ++i) CHECK(g.input[i] == 0.0f);
  for (std::int64_t i = 0; i < g.weights.size(); ++i) CHECK(g.weights[i] == 0.0f);
  for (std::int64_t i = 0; i < g.bias.size(); ++i) CHECK(g.bias[i] == 0.0f);
}

TEST_CASE("conv2d_backward: scalar chain rule") {
  Tensor x({1, 1, 1, 1}, {3.0f});
  Tensor w({1, 1, 1, 1}, {2.0f});
  Tensor go({1, 1, 1, 1}, {1.0f});
  ConvGrads g = conv2d_backward(go, x, w, 1, 0);
  CHECK(g.input[0] == doctest::Approx(2.0f));
  CHECK(g.weights[0] == doctest::Approx(3.0f));
  CHECK(g.bias[0] == doctest::Approx(1.0f));
}

TEST_CASE("conv2d_backward: agrees with central finite differences") {
  std::mt19937 rng(29);
  Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng);
  Tensor w = oracle::random_tensor({2, 2, 3, 3}, rng);
  Tensor go = oracle::random_tensor({1, 2, 5, 5}, rng);
  ConvGrads g = conv2d_backward(go, x, w, 1, 1);

  auto loss_x = [&](const Tensor& xv) {
    Tensor out = oracle::loop_conv2d(xv, w, nullptr, 1, 1);
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) acc += static_cast<double>(out[i]) * go[i];
    return acc;
  };
  auto loss_w = [&](const Tensor& wv) {
    Tensor out = oracle::loop_conv2d(x, wv, nullptr, 1, 1);
    double acc = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) acc += static_cast<double>(out[i]) * go[i];
    return acc;
  };
  CHECK(oracle::rel_max_err(g.input, oracle::finite_diff(loss_x, x)) < 1e-3);
  CHECK(oracle::rel_max_err(g.weights, oracle::finite_diff(loss_w, w)) < 1e-3);
}

TEST_CASE("reshape_fm lays channels out as rows") {
  Tensor x({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor m = reshape_fm(x);
  CHECK(m.shape() == std::vector<int>{2, 4});
  CHECK(m.at(0, 0) == 1.0f);
  CHECK(m.at(0, 3) == 4.0f);
  CHECK(m.at(1, 0) == 5.0f);
  CHECK(m.at(1, 3) == 8.0f);
}

TEST_CASE("reshape_fm round trip is exact") {
  std::mt19937 rng(31);
  Tensor x = oracle::random_tensor({3, 4, 5}, rng);
  Tensor back = unreshape_fm(reshape_fm(x), 4, 5);
  CHECK(back == x);
  CHECK_THROWS_AS(unreshape_fm(reshape_fm(x), 4, 4), DimensionError);
}

TEST_CASE("reshape then identity matmul then unreshape is the identity") {
  std::mt19937 rng(37);
  Tensor x = oracle::random_tensor({3, 2, 4}, rng);
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0f;
  Tensor back = unreshape_fm(matmul(eye, reshape_fm(x)), 2, 4);
  CHECK(oracle::max_abs_diff(back, x) == 0.0);
}

TEST_CASE("matmul basics and loop oracle") {
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0f;
  std::mt19937 rng(41);
  Tensor a = oracle::random_tensor({3, 4}, rng);
  CHECK(oracle::max_abs_diff(matmul(eye, a), a) == 0.0);

  Tensor z({4, 2});
  Tensor az = matmul(a, z);
  for (std::int64_t i = 0; i < az.size(); ++i) CHECK(az[i] == 0.0f);

  Tensor p = oracle::random_tensor({4, 5}, rng);
  Tensor q = oracle::random_tensor({5, 3}, rng);
  CHECK(oracle::max_abs_diff(matmul(p, q), oracle::loop_matmul(p, q)) < 1e-6);

  CHECK_THROWS_AS(matmul(p, a), DimensionError);
}

TEST_CASE("tensor invariants: shape/data length and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0f, 2.0f}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}), DimensionError);
  std::mt19937 rng(43);
  Tensor t = oracle::random_tensor({2, 3, 4}, rng);
  CHECK(t.all_finite());
}

TEST_SUITE_END();
