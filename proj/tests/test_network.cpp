// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "ceil/catalog.hpp"
#include "ceil/network.hpp"
#include "ceil/projection.hpp"
#include "support/oracles.hpp"

using namespace ceilc;

namespace {

// conv -> relu -> conv -> flatten -> dense toy net on a 6x6 input
NetworkGraph toy_net(std::mt19937& rng) {
  NetworkGraph net;
  net.input_shape = {2, 6, 6};
  LayerSpec c1{LayerKind::Conv2d, "c1"};
  c1.in_ch = 2;
  c1.out_ch = 3;
  c1.ksize = 3;
  c1.pad = 1;
  LayerSpec r1{LayerKind::ReLU, "r1"};
  LayerSpec c2{LayerKind::Conv2d, "c2"};
  c2.in_ch = 3;
  c2.out_ch = 2;
  c2.ksize = 3;
  c2.pad = 1;
  LayerSpec fl{LayerKind::Flatten, "fl"};
  LayerSpec fc{LayerKind::Dense, "fc"};
  fc.in_ch = 2 * 6 * 6;
  fc.units = 4;
  net.layers = {c1, r1, c2, fl, fc};
  net.params["c1.w"] = {oracle::random_tensor({3, 2, 3, 3}, rng), true};
  net.params["c1.b"] = {oracle::random_tensor({3}, rng), true};
  net.params["c2.w"] = {oracle::random_tensor({2, 3, 3, 3}, rng), true};
  net.params["c2.b"] = {oracle::random_tensor({2}, rng), true};
  net.params["fc.w"] = {oracle::random_tensor({4, 72}, rng), true};
  net.params["fc.b"] = {oracle::random_tensor({4}, rng), true};
  return net;
}

double net_loss(const NetworkGraph& net, const Tensor& batch, const Tensor& cot) {
  Tensor logits = forward(net, batch, false).logits;
  double acc = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i) acc += static_cast<double>(logits[i]) * cot[i];
  return acc;
}

}  // namespace

TEST_SUITE_BEGIN("network");

TEST_CASE("identity dense network reproduces its input") {
  NetworkGraph net;
  net.input_shape = {3, 1, 1};
  LayerSpec fc{LayerKind::Dense, "fc"};
  fc.in_ch = 3;
  fc.units = 3;
  net.layers = {fc};
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0f;
  net.params["fc.w"] = {eye, true};
  Tensor v({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor out = forward(net, v, false).logits;
  CHECK(oracle::max_abs_diff(out, v) == 0.0);
}

TEST_CASE("two-conv net equals manual kernel composition") {
  std::mt19937 rng(3);
  NetworkGraph net = toy_net(rng);
  Tensor x = oracle::random_tensor({2, 2, 6, 6}, rng);
  Tensor logits = forward(net, x, false).logits;

  // manual composition out of tensor-core kernels
  Tensor h = conv2d_forward(x, net.params["c1.w"].value, &net.params["c1.b"].value, 1, 1);
  for (std::int64_t i = 0; i < h.size(); ++i) h[i] = std::max(h[i], 0.0f);
  h = conv2d_forward(h, net.params["c2.w"].value, &net.params["c2.b"].value, 1, 1);
  Tensor flat = h.reshaped({2, 72});
  Tensor manual = matmul(flat, transpose(net.params["fc.w"].value));
  for (int r = 0; r < 2; ++r)
    for (int u = 0; u < 4; ++u) manual.at(r, u) += net.params["fc.b"].value[u];
  CHECK(oracle::max_abs_diff(logits, manual) < 1e-6);
}

TEST_CASE("forward is deterministic") {
  std::mt19937 rng(5);
  NetworkGraph net = toy_net(rng);
  Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
  Tensor a = forward(net, x, false).logits;
  Tensor b = forward(net, x, false).logits;
  CHECK(a == b);
}

TEST_CASE("forward rejects a mismatched batch, naming the edge") {
  std::mt19937 rng(7);
  NetworkGraph net = toy_net(rng);
  Tensor bad({1, 3, 6, 6});
  CHECK_THROWS_WITH_AS(forward(net, bad, false), doctest::Contains("edge input"), DimensionError);
}

TEST_CASE("projection onto an already-occupied subspace is a no-op") {
  // feature map whose channels k+1..c are zero; S1 = first k rows of I
  std::mt19937 rng(9);
  NetworkGraph net;
  net.input_shape = {4, 4, 4};
  LayerSpec r{LayerKind::ReLU, "act"};
  LayerSpec c{LayerKind::Conv2d, "head"};
  c.in_ch = 4;
  c.out_ch = 2;
  c.ksize = 1;
  LayerSpec fl{LayerKind::Flatten, "fl"};
  LayerSpec fc{LayerKind::Dense, "fc"};
  fc.in_ch = 32;
  fc.units = 3;
  net.layers = {r, c, fl, fc};
  net.params["head.w"] = {oracle::random_tensor({2, 4, 1, 1}, rng), true};
  net.params["fc.w"] = {oracle::random_tensor({3, 32}, rng), true};

  Tensor x({1, 4, 4, 4});
  for (int ch = 0; ch < 2; ++ch)  // only first k=2 channels carry signal
    for (int i = 0; i < 16; ++i)
      x[ch * 16 + i] = static_cast<float>(oracle::urand(rng));
  Tensor base = forward(net, x, false).logits;

  ProjectionPair pair;
  pair.k = 2;
  pair.site = "act";
  pair.s1 = Tensor({2, 4});
  pair.s1.at(0, 0) = 1.0f;
  pair.s1.at(1, 1) = 1.0f;
  pair.s2 = transpose(pair.s1);
  NetworkGraph pnet = insert_projection(net, pair);
  Tensor proj = forward(pnet, x, false).logits;
  CHECK(oracle::max_abs_diff(proj, base) < 1e-6);
}

TEST_CASE("backward: zero loss gradient gives all-zero gradients") {
  std::mt19937 rng(11);
  NetworkGraph net = toy_net(rng);
  Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
  ForwardResult fr = forward(net, x, true);
  GradMap g = backward(net, fr.cache, Tensor({1, 4}));
  CHECK(g.size() == 6);
  for (const auto& [k, t] : g)
    for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0f);
}

TEST_CASE("backward: frozen net with one projection trains exactly {s1,s2}") {
  std::mt19937 rng(13);
  NetworkGraph net = toy_net(rng);
  for (auto& [k, p] : net.params) p.trainable = false;
  ProjectionPair pair = random_init(3, 2, 99);
  pair.site = "c1";
  NetworkGraph pnet = insert_projection(net, pair);
  Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng);
  ForwardResult fr = forward(pnet, x, true);
  Tensor cot = oracle::random_tensor({1, 4}, rng);
  GradMap g = backward(pnet, fr.cache, cot);
  REQUIRE(g.size() == 2);
  CHECK(g.count("c1.proj.s1") == 1);
  CHECK(g.count("c1.proj.s2") == 1);
}

TEST_CASE("backward matches finite differences on a random toy net") {
  std::mt19937 rng(17);
  NetworkGraph net = toy_net(rng);
  Tensor x = oracle::random_tensor({1, 2, 6, 6}, rng, 0.0, 1.0);
  Tensor cot = oracle::random_tensor({1, 4}, rng);
  ForwardResult fr = forward(net, x, true);
  GradMap g = backward(net, fr.cache, cot);
  for (const auto& key : {"c1.w", "c2.w", "fc.w", "c1.b", "fc.b"}) {
    Tensor& pv = net.params[key].value;
    auto f = [&](const Tensor& v) {
      NetworkGraph tmp = net;
      tmp.params[key].value = v;
      return net_loss(tmp, x, cot);
    };
    Tensor fd = oracle::finite_diff(f, pv);
    CHECK_MESSAGE(oracle::rel_max_err(g.at(key), fd) < 1e-3, "param ", key);
  }
}

TEST_CASE("backward through pooling and residual adds matches finite differences") {
  std::mt19937 rng(19);
  NetworkGraph net;
  net.input_shape = {2, 4, 4};
  LayerSpec c1{LayerKind::Conv2d, "c1"};
  c1.in_ch = 2;
  c1.out_ch = 2;
  c1.ksize = 3;
  c1.pad = 1;
  LayerSpec r1{LayerKind::ReLU, "r1"};
  LayerSpec add{LayerKind::ResidualAdd, "add"};
  add.inputs = {"r1", "input"};
  LayerSpec mp{LayerKind::MaxPool2x2, "mp"};
  LayerSpec gp{LayerKind::GlobalAvgPool, "gp"};
  LayerSpec fc{LayerKind::Dense, "fc"};
  fc.in_ch = 2;
  fc.units = 3;
  net.layers = {c1, r1, add, mp, gp, fc};
  net.params["c1.w"] = {oracle::random_tensor({2, 2, 3, 3}, rng), true};
  net.params["fc.w"] = {oracle::random_tensor({3, 2}, rng), true};
  net.params["fc.b"] = {oracle::random_tensor({3}, rng), true};

  Tensor x = oracle::random_tensor({2, 2, 4, 4}, rng);
  Tensor cot = oracle::random_tensor({2, 3}, rng);
  ForwardResult fr = forward(net, x, true);
  GradMap g = backward(net, fr.cache, cot);
  for (const auto& key : {"c1.w", "fc.w"}) {
    auto f = [&](const Tensor& v) {
      NetworkGraph tmp = net;
      tmp.params[key].value = v;
      return net_loss(tmp, x, cot);
    };
    CHECK(oracle::rel_max_err(g.at(key), oracle::finite_diff(f, net.params[key].value)) < 1e-3);
  }
}

TEST_CASE("backward without a cache is a state error") {
  std::mt19937 rng(23);
  NetworkGraph net = toy_net(rng);
  ForwardCache cache;
  CHECK_THROWS_AS(backward(net, cache, Tensor({1, 4})), StateError);
}

TEST_CASE("softmax_xent: uniform logits give ln C") {
  Tensor logits({2, 5});
  XentResult r = softmax_xent(logits, {0, 3});
  CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-6));
  // probabilities sum to 1 -> row gradient sums to 0
  for (int b = 0; b < 2; ++b) {
    double s = 0.0;
    for (int c = 0; c < 5; ++c) s += r.grad.at(b, c);
    CHECK(std::abs(s) < 1e-6);
  }
}

TEST_CASE("softmax_xent: saturated true-class logit drives the loss to zero") {
  Tensor logits({1, 4});
  logits.at(0, 2) = 50.0f;
  XentResult r = softmax_xent(logits, {2});
  CHECK(r.loss < 1e-6);
}

TEST_CASE("softmax_xent matches an f64 oracle and rejects bad labels") {
  std::mt19937 rng(29);
  Tensor logits = oracle::random_tensor({4, 6}, rng, -3.0, 3.0);
  std::vector<int> labels = {1, 0, 5, 3};
  XentResult r = softmax_xent(logits, labels);
  double want = 0.0;
  for (int b = 0; b < 4; ++b) {
    double denom = 0.0;
    for (int c = 0; c < 6; ++c) denom += std::exp(static_cast<double>(logits.at(b, c)));
    want += std::log(denom) - static_cast<double>(logits.at(b, labels[static_cast<size_t>(b)]));
  }
  want /= 4.0;
  CHECK(r.loss == doctest::Approx(want).epsilon(1e-6));
  CHECK_THROWS_AS(softmax_xent(logits, {0, 1, 2, 6}), ParamError);
}

TEST_CASE("storage classes: conv-relu-pool chains fuse to the pool output") {
  NetworkGraph net;
  net.input_shape = {1, 8, 8};
  LayerSpec c1{LayerKind::Conv2d, "conv1"};
  c1.in_ch = 1;
  c1.out_ch = 4;
  c1.ksize = 3;
  c1.pad = 1;
  LayerSpec r1{LayerKind::ReLU, "relu1"};
  LayerSpec p1{LayerKind::MaxPool2x2, "pool1"};
  LayerSpec c2{LayerKind::Conv2d, "conv2"};
  c2.in_ch = 4;
  c2.out_ch = 2;
  c2.ksize = 3;
  c2.pad = 1;
  net.layers = {c1, r1, p1, c2};

  auto recs = classify_storage(net);
  REQUIRE(recs.size() == 4);
  std::map<std::string, ActivationRecord> by_name;
  for (const auto& r : recs) by_name[r.producer] = r;
  CHECK(by_name["conv1"].storage_class == StorageClass::Fused);
  CHECK(by_name["relu1"].storage_class == StorageClass::Fused);
  CHECK(by_name["pool1"].storage_class == StorageClass::Stored);
  CHECK(by_name["pool1"].site == "conv1");  // chain is named for its conv
  CHECK(by_name["pool1"].m == 4);           // 4x smaller than the preactivation map
  CHECK(by_name["conv2"].storage_class == StorageClass::Stored);
}

TEST_CASE("storage classes: fan-out tensors are always stored") {
  NetworkGraph net;
  net.input_shape = {2, 4, 4};
  LayerSpec c1{LayerKind::Conv2d, "conv1"};
  c1.in_ch = 2;
  c1.out_ch = 2;
  c1.ksize = 3;
  c1.pad = 1;
  LayerSpec r1{LayerKind::ReLU, "relu1"};
  LayerSpec c2{LayerKind::Conv2d, "conv2"};
  c2.in_ch = 2;
  c2.out_ch = 2;
  c2.ksize = 3;
  c2.pad = 1;
  LayerSpec add{LayerKind::ResidualAdd, "add"};
  add.inputs = {"conv2", "relu1"};  // relu1 feeds both conv2 and the add
  net.layers = {c1, r1, c2, add};

  auto recs = classify_storage(net);
  std::map<std::string, ActivationRecord> by_name;
  for (const auto& r : recs) by_name[r.producer] = r;
  CHECK(by_name["relu1"].storage_class == StorageClass::Stored);
  CHECK(by_name["conv2"].storage_class == StorageClass::Fused);  // streams into the add
  CHECK(by_name["add"].storage_class == StorageClass::Stored);
}

TEST_CASE("storage classes: single-layer net has exactly one stored record") {
  NetworkGraph net;
  net.input_shape = {1, 8, 8};
  LayerSpec c1{LayerKind::Conv2d, "conv1"};
  c1.in_ch = 1;
  c1.out_ch = 4;
  c1.ksize = 3;
  c1.pad = 1;
  net.layers = {c1};
  auto recs = classify_storage(net);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].storage_class == StorageClass::Stored);
  CHECK(recs[0].channels * recs[0].m * recs[0].n == 256);
}

TEST_CASE("projections attach only after activations") {
  std::mt19937 rng(31);
  NetworkGraph net = toy_net(rng);
  ProjectionPair pair = random_init(3, 1, 7);
  pair.site = "c1";
  NetworkGraph pnet = insert_projection(net, pair);
  int pidx = pnet.layer_index(projection_layer_name("c1"));
  REQUIRE(pidx > 0);
  auto ins = pnet.resolved_inputs(pidx);
  const LayerSpec* prod = pnet.find(ins[0]);
  REQUIRE(prod != nullptr);
  CHECK(prod->kind == LayerKind::ReLU);
}

TEST_CASE("graph validation catches duplicate names and bad wiring") {
  NetworkGraph net;
  net.input_shape = {1, 4, 4};
  LayerSpec a{LayerKind::ReLU, "x"};
  LayerSpec b{LayerKind::ReLU, "x"};
  net.layers = {a, b};
  CHECK_THROWS_AS(net.validate(), ConfigError);
  net.layers[1].name = "y";
  net.layers[1].inputs = {"nope"};
  CHECK_THROWS_AS(net.validate(), ConfigError);
}

TEST_CASE("shape-only layer kinds are rejected by forward") {
  NetworkGraph net;
  net.input_shape = {2, 8, 8};
  LayerSpec dw{LayerKind::DepthwiseConv2d, "dw"};
  dw.in_ch = 2;
  dw.ksize = 3;
  dw.pad = 1;
  net.layers = {dw};
  Tensor x({1, 2, 8, 8});
  CHECK_THROWS_AS(forward(net, x, false), ConfigError);
}

TEST_CASE("batch-norm folding matches explicit normalization") {
  std::mt19937 rng(37);
  Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  Tensor b = oracle::random_tensor({3}, rng);
  Tensor gamma = oracle::random_tensor({3}, rng, 0.5, 1.5);
  Tensor beta = oracle::random_tensor({3}, rng);
  Tensor mean = oracle::random_tensor({3}, rng);
  Tensor var = oracle::random_tensor({3}, rng, 0.2, 1.0);
  float eps = 1e-5f;
  auto [wf, bf] = fold_batchnorm(w, b, gamma, beta, mean, var, eps);

  Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng);
  Tensor raw = conv2d_forward(x, w, &b, 1, 1);
  Tensor folded = conv2d_forward(x, wf, &bf, 1, 1);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 25; ++i) {
      float bn = (raw[o * 25 + i] - mean[o]) / std::sqrt(var[o] + eps) * gamma[o] + beta[o];
      CHECK(std::abs(folded[o * 25 + i] - bn) < 1e-5);
    }
}

TEST_SUITE_END();
