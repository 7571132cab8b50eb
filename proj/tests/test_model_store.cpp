// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "ceil/catalog.hpp"
#include "ceil/model_store.hpp"
#include "ceil/projection.hpp"
#include "support/oracles.hpp"

using namespace ceilc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ceil_store_" + tag + "_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

NetworkGraph small_net(std::mt19937& rng) {
  NetworkGraph net = catalog_get("mnist-cnn");
  init_params(net, static_cast<std::uint32_t>(rng()));
  return net;
}

Checkpoint small_checkpoint(std::mt19937& rng) {
  Checkpoint ckpt;
  ckpt.net = small_net(rng);
  ckpt.epoch = 7;
  ckpt.stage = 2;
  ckpt.val_accuracy = 0.91251f;
  for (const auto& [key, p] : ckpt.net.params)
    ckpt.momentum[key] = oracle::random_tensor(p.value.shape(), rng);
  return ckpt;
}

}  // namespace

TEST_SUITE_BEGIN("model_store");

TEST_CASE("save -> load -> save produces byte-identical files") {
  TempDir dir("rt");
  std::mt19937 rng(3);
  Checkpoint ckpt = small_checkpoint(rng);
  save_checkpoint(ckpt, dir.file("a.ckpt"));
  Checkpoint loaded = load_checkpoint(dir.file("a.ckpt"));
  save_checkpoint(loaded, dir.file("b.ckpt"));
  CHECK(slurp(dir.file("a.ckpt")) == slurp(dir.file("b.ckpt")));

  CHECK(loaded.epoch == ckpt.epoch);
  CHECK(loaded.stage == ckpt.stage);
  CHECK(loaded.val_accuracy == ckpt.val_accuracy);  // bit-exact
  for (const auto& [key, p] : ckpt.net.params) {
    CHECK(loaded.net.params.at(key).value == p.value);
    CHECK(loaded.net.params.at(key).trainable == p.trainable);
  }
  for (const auto& [key, t] : ckpt.momentum) CHECK(loaded.momentum.at(key) == t);
}

TEST_CASE("trainable flags and projection pairs survive the round trip") {
  TempDir dir("proj");
  std::mt19937 rng(5);
  NetworkGraph net = small_net(rng);
  for (auto& [k, p] : net.params) p.trainable = false;
  ProjectionPair pair = random_init(16, 3, 11);
  pair.site = "conv1";
  net = insert_projection(net, pair);
  Checkpoint ckpt;
  ckpt.net = net;
  save_checkpoint(ckpt, dir.file("p.ckpt"));
  Checkpoint loaded = load_checkpoint(dir.file("p.ckpt"));
  CHECK(loaded.net.params.at("conv1.proj.s1").trainable);
  CHECK(loaded.net.params.at("conv1.proj.s2").trainable);
  CHECK_FALSE(loaded.net.params.at("conv1.w").trainable);
  Tensor x = oracle::random_tensor({2, 1, 28, 28}, rng);
  CHECK(oracle::max_abs_diff(forward(loaded.net, x, false).logits,
                             forward(net, x, false).logits) == 0.0);
}

TEST_CASE("bad magic and version are format errors") {
  TempDir dir("magic");
  std::mt19937 rng(7);
  save_network(small_net(rng), dir.file("m.ceil"));
  {
    std::fstream f(dir.file("m.ceil"), std::ios::binary | std::ios::in | std::ios::out);
    f.write("SEIL", 4);
  }
  CHECK_THROWS_AS(load_network(dir.file("m.ceil")), FormatError);
}

TEST_CASE("tampered payload length is a corruption error") {
  TempDir dir("tamper");
  std::mt19937 rng(9);
  save_network(small_net(rng), dir.file("t.ceil"));
  auto size = fs::file_size(dir.file("t.ceil"));
  fs::resize_file(dir.file("t.ceil"), size - 64);
  CHECK_THROWS_AS(load_network(dir.file("t.ceil")), CorruptionError);
}

TEST_CASE("folded export: no projections keeps the plain parameter count") {
  TempDir dir("plain");
  std::mt19937 rng(11);
  NetworkGraph net = small_net(rng);
  save_network(net, dir.file("plain.ceil"));
  export_folded(net, dir.file("folded.ceil"), false);
  CHECK(file_param_elements(dir.file("plain.ceil")) == file_param_elements(dir.file("folded.ceil")));
}

TEST_CASE("folded export drops s2 and shrinks by the fold arithmetic") {
  TempDir dir("fold");
  std::mt19937 rng(13);
  // conv(64)->relu->conv(64) so the fold delta matches the worked example
  NetworkGraph net;
  net.input_shape = {64, 4, 4};
  LayerSpec c1{LayerKind::Conv2d, "c1"};
  c1.in_ch = 64;
  c1.out_ch = 64;
  c1.ksize = 3;
  c1.pad = 1;
  LayerSpec r1{LayerKind::ReLU, "r1"};
  LayerSpec c2{LayerKind::Conv2d, "c2"};
  c2.in_ch = 64;
  c2.out_ch = 64;
  c2.ksize = 3;
  c2.pad = 1;
  LayerSpec gp{LayerKind::GlobalAvgPool, "gp"};
  LayerSpec fc{LayerKind::Dense, "fc"};
  fc.in_ch = 64;
  fc.units = 10;
  net.layers = {c1, r1, c2, gp, fc};
  net.params["c1.w"] = {oracle::random_tensor({64, 64, 3, 3}, rng), false};
  net.params["c2.w"] = {oracle::random_tensor({64, 64, 3, 3}, rng), false};
  net.params["fc.w"] = {oracle::random_tensor({10, 64}, rng), false};

  save_network(net, dir.file("base.ceil"));
  ProjectionPair pair = random_init(64, 16, 5);
  pair.site = "c1";
  NetworkGraph pnet = insert_projection(net, pair);
  export_folded(pnet, dir.file("folded.ceil"), false);

  long long base_elems = file_param_elements(dir.file("base.ceil"));
  long long folded_elems = file_param_elements(dir.file("folded.ceil"));
  CHECK(folded_elems - base_elems == -26624);  // 16*(576+64) - 576*64
  CHECK(file_meta(dir.file("folded.ceil"), "folded") == "1");

  // loaded folded model exposes w_tilde and s1, no s2, same logits
  NetworkGraph lf = load_network(dir.file("folded.ceil"));
  CHECK(lf.params.count("c1.proj.s1") == 1);
  CHECK(lf.params.count("c1.proj.s2") == 0);
  Tensor x = oracle::random_tensor({1, 64, 4, 4}, rng);
  Tensor a = forward(pnet, x, false).logits;
  Tensor b = forward(lf, x, false).logits;
  double scale = 1.0;
  for (std::int64_t i = 0; i < a.size(); ++i) scale = std::max(scale, std::abs(static_cast<double>(a[i])));
  CHECK(oracle::max_abs_diff(a, b) <= 1e-5 * scale);
}

TEST_CASE("file-level overhead theorem across ranks") {
  TempDir dir("thm");
  std::mt19937 rng(17);
  NetworkGraph net;
  net.input_shape = {8, 4, 4};
  LayerSpec c1{LayerKind::Conv2d, "c1"};
  c1.in_ch = 8;
  c1.out_ch = 8;
  c1.ksize = 3;
  c1.pad = 1;
  LayerSpec r1{LayerKind::ReLU, "r1"};
  LayerSpec c2{LayerKind::Conv2d, "c2"};
  c2.in_ch = 8;
  c2.out_ch = 4;
  c2.ksize = 1;
  LayerSpec gp{LayerKind::GlobalAvgPool, "gp"};
  LayerSpec fc{LayerKind::Dense, "fc"};
  fc.in_ch = 4;
  fc.units = 2;
  net.layers = {c1, r1, c2, gp, fc};
  net.params["c1.w"] = {oracle::random_tensor({8, 8, 3, 3}, rng), false};
  net.params["c2.w"] = {oracle::random_tensor({4, 8, 1, 1}, rng), false};
  net.params["fc.w"] = {oracle::random_tensor({2, 4}, rng), false};
  save_network(net, dir.file("base.ceil"));
  long long base_elems = file_param_elements(dir.file("base.ceil"));

  // p=1, c_o=4, c_i=8: bound = 32/12 = 2.67 -> k=2 shrinks, k=3 grows
  for (int k : {2, 3}) {
    ProjectionPair pair = random_init(8, k, static_cast<std::uint32_t>(k));
    pair.site = "c1";
    export_folded(insert_projection(net, pair), dir.file("f.ceil"), false);
    long long folded = file_param_elements(dir.file("f.ceil"));
    CHECK((folded < base_elems) == overhead_check(1, 4, 8, k));
  }
}

TEST_SUITE_END();
