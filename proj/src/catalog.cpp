// SPDX-License-Identifier: Apache-2.0
#include "ceil/catalog.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace ceilc {

namespace {

struct Builder {
  NetworkGraph net;
  std::string last = "input";

  LayerSpec& add(LayerKind kind, const std::string& name) {
    LayerSpec l;
    l.kind = kind;
    l.name = name;
    net.layers.push_back(std::move(l));
    last = name;
    return net.layers.back();
  }
  void conv(const std::string& name, int in_ch, int out_ch, int k, int stride, int pad,
            const std::string& from = "") {
    LayerSpec& l = add(LayerKind::Conv2d, name);
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.ksize = k;
    l.stride = stride;
    l.pad = pad;
    if (!from.empty()) l.inputs = {from};
  }
  void dwconv(const std::string& name, int ch, int k, int stride, int pad) {
    LayerSpec& l = add(LayerKind::DepthwiseConv2d, name);
    l.in_ch = ch;
    l.ksize = k;
    l.stride = stride;
    l.pad = pad;
  }
  void relu(const std::string& name) { add(LayerKind::ReLU, name); }
  void pool2(const std::string& name) { add(LayerKind::MaxPool2x2, name); }
  void pool3s2(const std::string& name) { add(LayerKind::MaxPool3x3s2, name); }
  void dense(const std::string& name, int in, int units) {
    LayerSpec& l = add(LayerKind::Dense, name);
    l.in_ch = in;
    l.units = units;
  }
  void flatten(const std::string& name) { add(LayerKind::Flatten, name); }
  void gap(const std::string& name) { add(LayerKind::GlobalAvgPool, name); }
  void residual(const std::string& name, const std::string& main, const std::string& skip) {
    LayerSpec& l = add(LayerKind::ResidualAdd, name);
    l.inputs = {main, skip};
  }
};

NetworkGraph make_vgg(const std::vector<int>& convs_per_block, const std::string&) {
  // Channel plan shared by the VGG family.
  const int widths[5] = {64, 128, 256, 512, 512};
  Builder b;
  b.net.input_shape = {3, 224, 224};
  int in_ch = 3;
  for (int blk = 0; blk < 5; ++blk) {
    for (int i = 0; i < convs_per_block[static_cast<size_t>(blk)]; ++i) {
      std::string id = std::to_string(blk + 1) + "_" + std::to_string(i + 1);
      b.conv("conv" + id, in_ch, widths[blk], 3, 1, 1);
      b.relu("relu" + id);
      in_ch = widths[blk];
    }
    b.pool2("pool" + std::to_string(blk + 1));
  }
  b.flatten("flat");
  b.dense("fc1", 512 * 7 * 7, 4096);
  b.relu("relu_fc1");
  b.dense("fc2", 4096, 4096);
  b.relu("relu_fc2");
  b.dense("fc3", 4096, 1000);
  return b.net;
}

NetworkGraph make_resnet18() {
  Builder b;
  b.net.input_shape = {3, 224, 224};
  b.conv("conv1", 3, 64, 7, 2, 3);
  b.relu("relu1");
  b.pool3s2("pool1");

  int in_ch = 64;
  const int plan[4][2] = {{64, 1}, {128, 2}, {256, 2}, {512, 2}};  // width, first stride
  for (int stage = 0; stage < 4; ++stage) {
    int width = plan[stage][0];
    for (int blk = 0; blk < 2; ++blk) {
      int stride = (blk == 0) ? plan[stage][1] : 1;
      std::string p = "layer" + std::to_string(stage + 1) + "." + std::to_string(blk);
      std::string block_in = b.last;
      b.conv(p + ".conv1", in_ch, width, 3, stride, 1, block_in);
      b.relu(p + ".relu1");
      b.conv(p + ".conv2", width, width, 3, 1, 1);
      std::string skip = block_in;
      if (stride != 1 || in_ch != width) {
        b.conv(p + ".downsample", in_ch, width, 1, stride, 0, block_in);
        skip = p + ".downsample";
      }
      b.residual(p + ".add", p + ".conv2", skip);
      b.relu(p + ".relu2");
      in_ch = width;
    }
  }
  b.gap("gap");
  b.dense("fc", 512, 1000);
  return b.net;
}

NetworkGraph make_mobilenet_v2() {
  Builder b;
  b.net.input_shape = {3, 224, 224};
  b.conv("stem", 3, 32, 3, 2, 1);
  b.relu("stem.relu");

  struct Group {
    int expand, out, repeat, stride;
  };
  const Group groups[] = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                          {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
  int in_ch = 32;
  int idx = 0;
  for (const auto& g : groups) {
    for (int r = 0; r < g.repeat; ++r) {
      int stride = (r == 0) ? g.stride : 1;
      std::string p = "b" + std::to_string(++idx);
      std::string block_in = b.last;
      int hidden = in_ch * g.expand;
      std::string cur = block_in;
      if (g.expand != 1) {
        b.conv(p + ".expand", in_ch, hidden, 1, 1, 0, cur);
        b.relu(p + ".expand.relu");
        cur = b.last;
      }
      b.dwconv(p + ".dw", hidden, 3, stride, 1);
      b.relu(p + ".dw.relu");
      b.conv(p + ".project", hidden, g.out, 1, 1, 0);
      if (stride == 1 && in_ch == g.out) b.residual(p + ".add", p + ".project", block_in);
      in_ch = g.out;
    }
  }
  b.conv("head", 320, 1280, 1, 1, 0);
  b.relu("head.relu");
  b.gap("gap");
  b.dense("fc", 1280, 1000);
  return b.net;
}

NetworkGraph make_mnist_cnn() {
  Builder b;
  b.net.input_shape = {1, 28, 28};
  b.conv("conv1", 1, 16, 3, 1, 1);
  b.relu("relu1");
  b.pool2("pool1");
  b.conv("conv2", 16, 16, 3, 1, 1);
  b.relu("relu2");
  b.pool2("pool2");
  b.flatten("flat");
  b.dense("fc1", 16 * 7 * 7, 64);
  b.relu("relu_fc1");
  b.dense("fc2", 64, 10);
  return b.net;
}

NetworkGraph make_cifar_cnn() {
  Builder b;
  b.net.input_shape = {3, 32, 32};
  b.conv("conv1", 3, 16, 3, 1, 1);
  b.relu("relu1");
  b.pool2("pool1");
  b.conv("conv2", 16, 32, 3, 1, 1);
  b.relu("relu2");
  b.pool2("pool2");
  b.conv("conv3", 32, 32, 3, 1, 1);
  b.relu("relu3");
  b.pool2("pool3");
  b.flatten("flat");
  b.dense("fc1", 32 * 4 * 4, 128);
  b.relu("relu_fc1");
  b.dense("fc2", 128, 10);
  return b.net;
}

}  // namespace

std::vector<std::string> catalog_names() {
  return {"vgg16", "vgg19", "resnet18", "mobilenetv2", "mnist-cnn", "cifar-cnn"};
}

bool catalog_has(const std::string& name) {
  for (const auto& n : catalog_names())
    if (n == name) return true;
  return false;
}

NetworkGraph catalog_get(const std::string& name) {
  if (name == "vgg16") return make_vgg({2, 2, 3, 3, 3}, name);
  if (name == "vgg19") return make_vgg({2, 2, 4, 4, 4}, name);
  if (name == "resnet18") return make_resnet18();
  if (name == "mobilenetv2") return make_mobilenet_v2();
  if (name == "mnist-cnn") return make_mnist_cnn();
  if (name == "cifar-cnn") return make_cifar_cnn();
  throw LookupError("unknown architecture '" + name + "'");
}

long long catalog_param_count(const std::string& name) {
  // Reference totals; resnet18/mobilenetv2 include batch-norm scale/shift.
  if (name == "vgg16") return 138357544LL;
  if (name == "vgg19") return 143667240LL;
  if (name == "resnet18") return 11689512LL;
  if (name == "mobilenetv2") return 3504872LL;
  if (catalog_has(name)) return analytic_param_count(catalog_get(name));
  throw LookupError("no parameter count for architecture '" + name + "'");
}

std::array<int, 3> catalog_input_shape(const std::string& name) {
  return catalog_get(name).input_shape;
}

long long analytic_param_count(const NetworkGraph& net) {
  long long total = 0;
  for (const auto& l : net.layers) {
    switch (l.kind) {
      case LayerKind::Conv2d:
        total += static_cast<long long>(l.out_ch) * l.in_ch * l.ksize * l.ksize + l.out_ch;
        break;
      case LayerKind::DepthwiseConv2d:
        total += static_cast<long long>(l.in_ch) * l.ksize * l.ksize + l.in_ch;
        break;
      case LayerKind::Dense:
        total += static_cast<long long>(l.units) * l.in_ch + l.units;
        break;
      default:
        break;
    }
  }
  return total;
}

std::string arch_to_text(const NetworkGraph& net) {
  std::ostringstream os;
  os << "input " << net.input_shape[0] << "x" << net.input_shape[1] << "x" << net.input_shape[2]
     << "\n";
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    os << layer_kind_name(l.kind) << " " << l.name;
    switch (l.kind) {
      case LayerKind::Conv2d:
        os << " in=" << l.in_ch << " out=" << l.out_ch << " k=" << l.ksize
           << " stride=" << l.stride << " pad=" << l.pad;
        break;
      case LayerKind::DepthwiseConv2d:
        os << " ch=" << l.in_ch << " k=" << l.ksize << " stride=" << l.stride << " pad=" << l.pad;
        break;
      case LayerKind::Dense:
        os << " in=" << l.in_ch << " units=" << l.units;
        break;
      case LayerKind::Projection:
      case LayerKind::Compress:
        os << " k=" << l.rank;
        break;
      default:
        break;
    }
    if (l.kind == LayerKind::ResidualAdd) {
      os << " from=" << l.inputs.at(0) << " skip=" << l.inputs.at(1);
    } else if (!l.inputs.empty()) {
      // only written when it differs from the previous-layer default
      std::string def = (i == 0) ? "input" : net.layers[i - 1].name;
      if (l.inputs[0] != def) os << " from=" << l.inputs[0];
    }
    os << "\n";
  }
  return os.str();
}

NetworkGraph arch_from_text(const std::string& text) {
  NetworkGraph net;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string kind_s;
    if (!(ls >> kind_s)) continue;
    if (kind_s == "input") {
      std::string shp;
      ls >> shp;
      int c, h, w;
      char x1, x2;
      std::istringstream ss(shp);
      if (!(ss >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x')
        throw FormatError("line " + std::to_string(lineno) + ": bad input shape '" + shp + "'");
      net.input_shape = {c, h, w};
      continue;
    }
    LayerSpec l;
    l.kind = layer_kind_from_name(kind_s);
    if (!(ls >> l.name))
      throw FormatError("line " + std::to_string(lineno) + ": layer needs a name");
    std::string kv, from, skip;
    while (ls >> kv) {
      auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw FormatError("line " + std::to_string(lineno) + ": expected key=value, got '" + kv + "'");
      std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "from") {
        from = val;
      } else if (key == "skip") {
        skip = val;
      } else {
        int n;
        try {
          n = std::stoi(val);
        } catch (...) {
          throw FormatError("line " + std::to_string(lineno) + ": bad integer '" + val + "'");
        }
        if (key == "in" || key == "ch")
          l.in_ch = n;
        else if (key == "out")
          l.out_ch = n;
        else if (key == "k" && (l.kind == LayerKind::Projection || l.kind == LayerKind::Compress))
          l.rank = n;
        else if (key == "k")
          l.ksize = n;
        else if (key == "stride")
          l.stride = n;
        else if (key == "pad")
          l.pad = n;
        else if (key == "units")
          l.units = n;
        else
          throw FormatError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    }
    if (l.kind == LayerKind::ResidualAdd) {
      if (from.empty() || skip.empty())
        throw FormatError("line " + std::to_string(lineno) + ": residualadd needs from= and skip=");
      l.inputs = {from, skip};
    } else if (!from.empty()) {
      l.inputs = {from};
    }
    net.layers.push_back(std::move(l));
  }
  if (net.layers.empty()) throw FormatError("architecture description has no layers");
  return net;
}

NetworkGraph resolve_arch(const std::string& name_or_path) {
  if (catalog_has(name_or_path)) return catalog_get(name_or_path);
  std::ifstream f(name_or_path);
  if (!f) throw LookupError("'" + name_or_path + "' is neither a catalog architecture nor a readable file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return arch_from_text(ss.str());
}

void init_params(NetworkGraph& net, std::uint32_t seed) {
  std::mt19937 rng(seed);
  auto uniform = [&]() { return (rng() >> 8) * (1.0 / 16777216.0); };
  auto normal = [&]() {
    double u1 = std::max(uniform(), 1e-12), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  for (const auto& l : net.layers) {
    if (l.kind == LayerKind::Conv2d) {
      Tensor w({l.out_ch, l.in_ch, l.ksize, l.ksize});
      double scale = std::sqrt(2.0 / (static_cast<double>(l.in_ch) * l.ksize * l.ksize));
      for (std::int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(normal() * scale);
      net.params[l.name + ".w"] = Param{std::move(w), true};
      net.params[l.name + ".b"] = Param{Tensor({l.out_ch}), true};
    } else if (l.kind == LayerKind::Dense) {
      Tensor w({l.units, l.in_ch});
      double scale = std::sqrt(2.0 / static_cast<double>(l.in_ch));
      for (std::int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(normal() * scale);
      net.params[l.name + ".w"] = Param{std::move(w), true};
      net.params[l.name + ".b"] = Param{Tensor({l.units}), true};
    }
  }
}

}  // namespace ceilc
