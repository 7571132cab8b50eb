// SPDX-License-Identifier: Apache-2.0
#include "ceil/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

namespace ceilc {

namespace {

constexpr const char* kInputName = "input";

struct KindName {
  LayerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {LayerKind::Conv2d, "conv2d"},
    {LayerKind::ReLU, "relu"},
    {LayerKind::MaxPool2x2, "maxpool2x2"},
    {LayerKind::Dense, "dense"},
    {LayerKind::ResidualAdd, "residualadd"},
    {LayerKind::GlobalAvgPool, "globalavgpool"},
    {LayerKind::Flatten, "flatten"},
    {LayerKind::SoftmaxXent, "softmaxxent"},
    {LayerKind::Projection, "projection"},
    {LayerKind::Compress, "compress"},
    {LayerKind::DepthwiseConv2d, "dwconv2d"},
    {LayerKind::MaxPool3x3s2, "maxpool3x3s2"},
};

}  // namespace

const char* layer_kind_name(LayerKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
  for (const auto& kn : kKindNames)
    if (s == kn.name) return kn.kind;
  throw FormatError("unknown layer kind '" + s + "'");
}

bool layer_kind_executable(LayerKind k) {
  return k != LayerKind::DepthwiseConv2d && k != LayerKind::MaxPool3x3s2;
}

const LayerSpec* NetworkGraph::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

int NetworkGraph::layer_index(const std::string& name) const {
  for (size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return static_cast<int>(i);
  return -1;
}

std::vector<std::string> NetworkGraph::resolved_inputs(int layer_idx) const {
  const LayerSpec& l = layers[static_cast<size_t>(layer_idx)];
  if (!l.inputs.empty()) return l.inputs;
  if (layer_idx == 0) return {kInputName};
  return {layers[static_cast<size_t>(layer_idx) - 1].name};
}

std::map<std::string, std::vector<std::string>> NetworkGraph::consumer_map() const {
  std::map<std::string, std::vector<std::string>> out;
  for (size_t i = 0; i < layers.size(); ++i)
    for (const auto& in : resolved_inputs(static_cast<int>(i)))
      out[in].push_back(layers[i].name);
  return out;
}

void NetworkGraph::validate() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  std::set<std::string> seen;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.name.empty() || l.name == kInputName)
      throw ConfigError("layer " + std::to_string(i) + " has a reserved or empty name");
    if (!seen.insert(l.name).second) throw ConfigError("duplicate layer name '" + l.name + "'");
    auto ins = resolved_inputs(static_cast<int>(i));
    size_t want = l.kind == LayerKind::ResidualAdd ? 2 : 1;
    if (ins.size() != want)
      throw ConfigError("layer '" + l.name + "' expects " + std::to_string(want) +
                        " input(s), has " + std::to_string(ins.size()));
    for (const auto& in : ins) {
      if (in == kInputName) continue;
      if (!seen.count(in))
        throw ConfigError("layer '" + l.name + "' consumes '" + in +
                          "' which is not produced earlier (graph must be topologically ordered)");
    }
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv2d:
        if (l.in_ch <= 0 || l.ksize <= 0 || l.stride <= 0 || l.pad < 0 ||
            (l.kind == LayerKind::Conv2d && l.out_ch <= 0))
          throw ConfigError("layer '" + l.name + "' has non-positive attributes");
        break;
      case LayerKind::Dense:
        if (l.in_ch <= 0 || l.units <= 0)
          throw ConfigError("layer '" + l.name + "' has non-positive attributes");
        break;
      case LayerKind::Projection:
      case LayerKind::Compress:
        if (l.rank <= 0) throw ConfigError("layer '" + l.name + "' has non-positive rank");
        break;
      default:
        break;
    }
  }
  infer_shapes(*this);  // throws on shape inconsistencies
}

std::map<std::string, std::array<int, 3>> infer_shapes(const NetworkGraph& net) {
  if (net.input_shape[0] <= 0 || net.input_shape[1] <= 0 || net.input_shape[2] <= 0)
    throw ConfigError("network input shape is not set");
  std::map<std::string, std::array<int, 3>> shapes;
  shapes[kInputName] = net.input_shape;

  auto conv_out = [](const LayerSpec& l, std::array<int, 3> in, int out_ch) {
    int oh = (in[1] + 2 * l.pad - l.ksize) / l.stride + 1;
    int ow = (in[2] + 2 * l.pad - l.ksize) / l.stride + 1;
    if (oh <= 0 || ow <= 0)
      throw ConfigError("layer '" + l.name + "' output size is not positive");
    return std::array<int, 3>{out_ch, oh, ow};
  };

  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    auto ins = net.resolved_inputs(static_cast<int>(i));
    std::array<int, 3> a = shapes.at(ins[0]);
    std::array<int, 3> out{};
    switch (l.kind) {
      case LayerKind::Conv2d:
        if (a[0] != l.in_ch)
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": expected c_i=" +
                               std::to_string(l.in_ch) + ", got " + std::to_string(a[0]));
        out = conv_out(l, a, l.out_ch);
        break;
      case LayerKind::DepthwiseConv2d:
        if (a[0] != l.in_ch)
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": expected c_i=" +
                               std::to_string(l.in_ch) + ", got " + std::to_string(a[0]));
        out = conv_out(l, a, a[0]);
        break;
      case LayerKind::ReLU:
      case LayerKind::SoftmaxXent:
        out = a;
        break;
      case LayerKind::MaxPool2x2:
        out = {a[0], a[1] / 2, a[2] / 2};
        if (out[1] <= 0 || out[2] <= 0)
          throw ConfigError("layer '" + l.name + "' pools a too-small input");
        break;
      case LayerKind::MaxPool3x3s2:
        out = {a[0], (a[1] + 2 - 3) / 2 + 1, (a[2] + 2 - 3) / 2 + 1};
        break;
      case LayerKind::Dense:
        if (a[1] != 1 || a[2] != 1)
          throw DimensionError("edge " + ins[0] + "->" + l.name +
                               ": dense input must be flat, got spatial " +
                               std::to_string(a[1]) + "x" + std::to_string(a[2]));
        if (a[0] != l.in_ch)
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": expected width " +
                               std::to_string(l.in_ch) + ", got " + std::to_string(a[0]));
        out = {l.units, 1, 1};
        break;
      case LayerKind::ResidualAdd: {
        std::array<int, 3> b = shapes.at(ins[1]);
        if (a != b)
          throw DimensionError("edge " + ins[0] + "," + ins[1] + "->" + l.name +
                               ": residual shapes differ");
        out = a;
        break;
      }
      case LayerKind::GlobalAvgPool:
        out = {a[0], 1, 1};
        break;
      case LayerKind::Flatten:
        out = {a[0] * a[1] * a[2], 1, 1};
        break;
      case LayerKind::Projection:
        if (l.rank >= a[0])
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": rank k=" +
                               std::to_string(l.rank) + " must be < channels " +
                               std::to_string(a[0]));
        out = a;
        break;
      case LayerKind::Compress:
        if (l.rank >= a[0])
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": rank k=" +
                               std::to_string(l.rank) + " must be < channels " +
                               std::to_string(a[0]));
        out = {l.rank, a[1], a[2]};
        break;
    }
    shapes[l.name] = out;
  }
  return shapes;
}

namespace {

// a^T . b with a [q,p], b [q,r] -> out [p,r]
void gemm_tn(const float* a, const float* b, float* out, int q, int p, int r) {
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < r; ++j) {
      double acc = 0.0;
      for (int k = 0; k < q; ++k)
        acc += static_cast<double>(a[static_cast<size_t>(k) * p + i]) * b[static_cast<size_t>(k) * r + j];
      out[static_cast<size_t>(i) * r + j] = static_cast<float>(acc);
    }
}

// a . b^T with a [p,q], b [r,q] -> out [p,r]
void gemm_nt(const float* a, const float* b, float* out, int p, int q, int r) {
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < r; ++j) {
      double acc = 0.0;
      const float* ar = a + static_cast<size_t>(i) * q;
      const float* br = b + static_cast<size_t>(j) * q;
      for (int k = 0; k < q; ++k) acc += static_cast<double>(ar[k]) * br[k];
      out[static_cast<size_t>(i) * r + j] = static_cast<float>(acc);
    }
}

const Param* maybe_param(const NetworkGraph& net, const std::string& key) {
  auto it = net.params.find(key);
  return it == net.params.end() ? nullptr : &it->second;
}

const Param& need_param(const NetworkGraph& net, const std::string& key) {
  const Param* p = maybe_param(net, key);
  if (!p) throw ConfigError("missing parameter '" + key + "'");
  return *p;
}

Tensor relu_forward(const Tensor& x) {
  Tensor out = x;
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0f ? out[i] : 0.0f;
  return out;
}

Tensor maxpool2x2_forward(const Tensor& x, std::vector<int>* argmax) {
  if (x.rank() != 4) throw DimensionError("maxpool2x2 input must be [B,c,h,w], got " + x.shape_str());
  int B = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ConfigError("maxpool2x2 requires even spatial dims, got " + x.shape_str());
  int oh = h / 2, ow = w / 2;
  Tensor out({B, c, oh, ow});
  argmax->assign(static_cast<size_t>(B) * c * oh * ow, 0);
  std::int64_t oi = 0;
  for (int b = 0; b < B; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const float* plane = x.data() + (static_cast<size_t>(b) * c + ch) * h * w;
      std::int64_t plane_off = (static_cast<std::int64_t>(b) * c + ch) * h * w;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          int iy = oy * 2, ix = ox * 2;
          int besti = iy * w + ix;
          float best = plane[besti];
          const int cand[3] = {iy * w + ix + 1, (iy + 1) * w + ix, (iy + 1) * w + ix + 1};
          for (int t = 0; t < 3; ++t)
            if (plane[cand[t]] > best) {
              best = plane[cand[t]];
              besti = cand[t];
            }
          out[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = static_cast<int>(plane_off + besti);
        }
    }
  return out;
}

}  // namespace

ForwardResult forward(const NetworkGraph& net, const Tensor& batch, bool keep_cache) {
  net.validate();
  // Accept [B,c,h,w]; a flat [B,n] batch is allowed when the declared input is (n,1,1).
  Tensor x = batch;
  if (batch.rank() == 2 && net.input_shape[1] == 1 && net.input_shape[2] == 1)
    x = batch.reshaped({batch.dim(0), batch.dim(1), 1, 1});
  if (x.rank() != 4 || x.dim(1) != net.input_shape[0] || x.dim(2) != net.input_shape[1] ||
      x.dim(3) != net.input_shape[2])
    throw DimensionError("edge input: batch shape " + batch.shape_str() +
                         " does not match declared input " + std::to_string(net.input_shape[0]) +
                         "x" + std::to_string(net.input_shape[1]) + "x" +
                         std::to_string(net.input_shape[2]));

  // Which activations must be retained for backward: inputs of parameterized
  // layers plus ReLU outputs (their own mask).
  std::set<std::string> retain;
  if (keep_cache) {
    for (size_t i = 0; i < net.layers.size(); ++i) {
      const LayerSpec& l = net.layers[i];
      if (l.kind == LayerKind::Conv2d || l.kind == LayerKind::Dense ||
          l.kind == LayerKind::Projection || l.kind == LayerKind::Compress ||
          l.kind == LayerKind::Flatten)
        for (const auto& in : net.resolved_inputs(static_cast<int>(i))) retain.insert(in);
      if (l.kind == LayerKind::ReLU) retain.insert(l.name);
    }
  }

  ForwardResult res;
  ForwardCache& cache = res.cache;
  std::map<std::string, Tensor> values;
  values[kInputName] = x;

  auto value_of = [&](const std::string& name) -> const Tensor& {
    auto it = values.find(name);
    if (it == values.end()) throw StateError("internal: tensor '" + name + "' not available");
    return it->second;
  };

  const int B = x.dim(0);
  std::string last_name = kInputName;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (!layer_kind_executable(l.kind))
      throw ConfigError("layer '" + l.name + "' (" + layer_kind_name(l.kind) +
                        ") is shape-only and cannot be executed");
    auto ins = net.resolved_inputs(static_cast<int>(i));
    const Tensor& a = value_of(ins[0]);
    Tensor out;
    switch (l.kind) {
      case LayerKind::Conv2d: {
        const Param& w = need_param(net, l.name + ".w");
        const Param* b = maybe_param(net, l.name + ".b");
        out = conv2d_forward(a, w.value, b ? &b->value : nullptr, l.stride, l.pad);
        break;
      }
      case LayerKind::ReLU:
        out = relu_forward(a);
        break;
      case LayerKind::MaxPool2x2: {
        std::vector<int> argmax;
        out = maxpool2x2_forward(a, &argmax);
        if (keep_cache) cache.pool_argmax[l.name] = std::move(argmax);
        break;
      }
      case LayerKind::Dense: {
        const Param& w = need_param(net, l.name + ".w");
        const Param* b = maybe_param(net, l.name + ".b");
        Tensor ar = a;
        if (ar.rank() == 4 && ar.dim(2) == 1 && ar.dim(3) == 1)
          ar = ar.reshaped({B, ar.dim(1)});
        if (ar.rank() != 2 || ar.dim(1) != w.value.dim(1))
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": dense input " +
                               a.shape_str() + " does not match weights " + w.value.shape_str());
        out = Tensor({B, w.value.dim(0)});
        gemm_nt(ar.data(), w.value.data(), out.data(), B, ar.dim(1), w.value.dim(0));
        if (b)
          for (int r = 0; r < B; ++r)
            for (int u = 0; u < out.dim(1); ++u) out.at(r, u) += b->value[u];
        break;
      }
      case LayerKind::ResidualAdd: {
        const Tensor& bb = value_of(ins[1]);
        if (!a.same_shape(bb))
          throw DimensionError("edge " + ins[0] + "," + ins[1] + "->" + l.name +
                               ": residual shapes differ: " + a.shape_str() + " vs " +
                               bb.shape_str());
        out = a;
        for (std::int64_t t = 0; t < out.size(); ++t) out[t] += bb[t];
        break;
      }
      case LayerKind::GlobalAvgPool: {
        int c = a.dim(1), hw = a.dim(2) * a.dim(3);
        out = Tensor({B, c});
        for (int b = 0; b < B; ++b)
          for (int ch = 0; ch < c; ++ch) {
            const float* plane = a.data() + (static_cast<size_t>(b) * c + ch) * hw;
            double acc = 0.0;
            for (int t = 0; t < hw; ++t) acc += plane[t];
            out.at(b, ch) = static_cast<float>(acc / hw);
          }
        break;
      }
      case LayerKind::Flatten:
        out = a.reshaped({B, static_cast<int>(a.size() / B)});
        break;
      case LayerKind::SoftmaxXent:
        if (i + 1 != net.layers.size())
          throw ConfigError("softmaxxent layer '" + l.name + "' must be last");
        out = a;  // loss marker; logits pass through
        break;
      case LayerKind::Projection: {
        const Tensor& s1 = need_param(net, l.name + ".s1").value;  // [k,c]
        const Tensor& s2 = need_param(net, l.name + ".s2").value;  // [c,k]
        int c = a.dim(1), hw = a.dim(2) * a.dim(3);
        if (s1.dim(1) != c)
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": projection expects " +
                               std::to_string(s1.dim(1)) + " channels, got " + std::to_string(c));
        int k = s1.dim(0);
        out = Tensor(a.shape());
        std::vector<float> y(static_cast<size_t>(k) * hw);
        for (int b = 0; b < B; ++b) {
          const float* xm = a.data() + static_cast<size_t>(b) * c * hw;
          detail::gemm(s1.data(), xm, y.data(), k, c, hw);
          detail::gemm(s2.data(), y.data(), out.data() + static_cast<size_t>(b) * c * hw, c, k, hw);
        }
        break;
      }
      case LayerKind::Compress: {
        const Tensor& s1 = need_param(net, l.name + ".s1").value;  // [k,c]
        int c = a.dim(1), hw = a.dim(2) * a.dim(3);
        if (s1.dim(1) != c)
          throw DimensionError("edge " + ins[0] + "->" + l.name + ": compress expects " +
                               std::to_string(s1.dim(1)) + " channels, got " + std::to_string(c));
        int k = s1.dim(0);
        out = Tensor({B, k, a.dim(2), a.dim(3)});
        for (int b = 0; b < B; ++b)
          detail::gemm(s1.data(), a.data() + static_cast<size_t>(b) * c * hw,
                       out.data() + static_cast<size_t>(b) * k * hw, k, c, hw);
        break;
      }
      default:
        throw ConfigError("unhandled layer kind");
    }
    values[l.name] = std::move(out);
    last_name = l.name;

    // Drop tensors no longer needed when not caching.
    if (!keep_cache && i >= 1) {
      // keep it simple: only the values still consumed later or final
      std::set<std::string> needed{last_name};
      for (size_t j = i + 1; j < net.layers.size(); ++j)
        for (const auto& in : net.resolved_inputs(static_cast<int>(j))) needed.insert(in);
      for (auto it = values.begin(); it != values.end();)
        it = needed.count(it->first) ? std::next(it) : values.erase(it);
    }
  }

  res.logits = values.at(last_name);
  if (res.logits.rank() != 2)
    throw ConfigError("network output must be [batch, classes], got " + res.logits.shape_str());
  if (keep_cache) {
    cache.valid = true;
    cache.input = std::move(x);
    for (const auto& name : retain) {
      auto it = values.find(name);
      if (it != values.end() && name != kInputName) cache.values[name] = it->second;
    }
  }
  return res;
}

GradMap backward(const NetworkGraph& net, const ForwardCache& cache, const Tensor& loss_grad) {
  if (!cache.valid) throw StateError("backward requires a cache from forward(..., keep_cache=true)");
  auto shapes = infer_shapes(net);
  const int B = cache.input.dim(0);

  auto cached = [&](const std::string& name) -> const Tensor& {
    if (name == kInputName) return cache.input;
    auto it = cache.values.find(name);
    if (it == cache.values.end())
      throw StateError("activation cache is missing '" + name + "' (stale or mismatched cache)");
    return it->second;
  };
  auto batched_shape = [&](const std::string& name) -> std::vector<int> {
    if (name == kInputName)
      return {B, net.input_shape[0], net.input_shape[1], net.input_shape[2]};
    auto s = shapes.at(name);
    const LayerSpec* l = net.find(name);
    // Flat producers (dense/flatten/gap) carry rank-2 activations.
    if (l && (l->kind == LayerKind::Dense || l->kind == LayerKind::Flatten ||
              l->kind == LayerKind::GlobalAvgPool))
      return {B, s[0]};
    return {B, s[0], s[1], s[2]};
  };

  std::map<std::string, Tensor> grads;  // by tensor (layer) name
  auto add_grad = [&](const std::string& name, Tensor g) {
    auto it = grads.find(name);
    if (it == grads.end()) {
      grads.emplace(name, std::move(g));
    } else {
      for (std::int64_t t = 0; t < g.size(); ++t) it->second[t] += g[t];
    }
  };
  auto take_grad = [&](const std::string& name) -> Tensor {
    auto it = grads.find(name);
    if (it != grads.end()) return it->second;
    return Tensor(batched_shape(name));  // zero cotangent
  };

  // Seed: the last executable layer's output is the logits.
  std::string last = net.layers.back().name;
  Tensor seed = loss_grad;
  grads.emplace(last, std::move(seed));

  GradMap out;
  auto emit_param_grad = [&](const std::string& key, Tensor g) {
    auto it = net.params.find(key);
    if (it != net.params.end() && it->second.trainable) out[key] = std::move(g);
  };

  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = net.layers[static_cast<size_t>(i)];
    auto ins = net.resolved_inputs(i);
    Tensor g = take_grad(l.name);
    switch (l.kind) {
      case LayerKind::Conv2d: {
        const Tensor& w = need_param(net, l.name + ".w").value;
        ConvGrads cg = conv2d_backward(g, cached(ins[0]), w, l.stride, l.pad);
        emit_param_grad(l.name + ".w", std::move(cg.weights));
        if (maybe_param(net, l.name + ".b")) emit_param_grad(l.name + ".b", std::move(cg.bias));
        add_grad(ins[0], std::move(cg.input));
        break;
      }
      case LayerKind::ReLU: {
        const Tensor& y = cached(l.name);
        Tensor gi = g;
        for (std::int64_t t = 0; t < gi.size(); ++t)
          if (y[t] <= 0.0f) gi[t] = 0.0f;
        add_grad(ins[0], std::move(gi));
        break;
      }
      case LayerKind::MaxPool2x2: {
        auto it = cache.pool_argmax.find(l.name);
        if (it == cache.pool_argmax.end())
          throw StateError("activation cache is missing pool indices for '" + l.name + "'");
        Tensor gi(batched_shape(ins[0]));
        const std::vector<int>& am = it->second;
        for (size_t t = 0; t < am.size(); ++t)
          gi[am[t]] += g[static_cast<std::int64_t>(t)];
        add_grad(ins[0], std::move(gi));
        break;
      }
      case LayerKind::Dense: {
        const Tensor& w = need_param(net, l.name + ".w").value;  // [units,in]
        const Tensor& xin = cached(ins[0]);                      // [B,in]
        Tensor gw({w.dim(0), w.dim(1)});
        gemm_tn(g.data(), xin.data(), gw.data(), B, w.dim(0), w.dim(1));
        emit_param_grad(l.name + ".w", std::move(gw));
        if (maybe_param(net, l.name + ".b")) {
          Tensor gb({w.dim(0)});
          for (int r = 0; r < B; ++r)
            for (int u = 0; u < w.dim(0); ++u) gb[u] += g.at(r, u);
          emit_param_grad(l.name + ".b", std::move(gb));
        }
        Tensor gi({B, w.dim(1)});
        detail::gemm(g.data(), w.data(), gi.data(), B, w.dim(0), w.dim(1));
        add_grad(ins[0], std::move(gi));
        break;
      }
      case LayerKind::ResidualAdd:
        add_grad(ins[0], g);
        add_grad(ins[1], std::move(g));
        break;
      case LayerKind::GlobalAvgPool: {
        auto s = batched_shape(ins[0]);
        Tensor gi(s);
        int c = s[1], hw = s[2] * s[3];
        float inv = 1.0f / static_cast<float>(hw);
        for (int b = 0; b < B; ++b)
          for (int ch = 0; ch < c; ++ch) {
            float gv = g.at(b, ch) * inv;
            float* plane = gi.data() + (static_cast<size_t>(b) * c + ch) * hw;
            for (int t = 0; t < hw; ++t) plane[t] = gv;
          }
        add_grad(ins[0], std::move(gi));
        break;
      }
      case LayerKind::Flatten:
        add_grad(ins[0], g.reshaped(batched_shape(ins[0])));
        break;
      case LayerKind::SoftmaxXent:
        add_grad(ins[0], std::move(g));
        break;
      case LayerKind::Projection: {
        const Tensor& s1 = need_param(net, l.name + ".s1").value;  // [k,c]
        const Tensor& s2 = need_param(net, l.name + ".s2").value;  // [c,k]
        const Tensor& xin = cached(ins[0]);
        int c = s1.dim(1), k = s1.dim(0), hw = xin.dim(2) * xin.dim(3);
        std::vector<double> gs1(static_cast<size_t>(k) * c, 0.0);
        std::vector<double> gs2(static_cast<size_t>(c) * k, 0.0);
        std::vector<float> y(static_cast<size_t>(k) * hw);
        std::vector<float> gy(static_cast<size_t>(k) * hw);
        std::vector<float> tmp(static_cast<size_t>(std::max(c, k)) * std::max(c, k));
        Tensor gi(xin.shape());
        for (int b = 0; b < B; ++b) {
          const float* xm = xin.data() + static_cast<size_t>(b) * c * hw;
          const float* gm = g.data() + static_cast<size_t>(b) * c * hw;
          detail::gemm(s1.data(), xm, y.data(), k, c, hw);
          // grad_s2 += G . y^T
          gemm_nt(gm, y.data(), tmp.data(), c, hw, k);
          for (size_t t = 0; t < gs2.size(); ++t) gs2[t] += tmp[t];
          // grad_y = s2^T . G
          gemm_tn(s2.data(), gm, gy.data(), c, k, hw);
          // grad_s1 += grad_y . xm^T
          gemm_nt(gy.data(), xm, tmp.data(), k, hw, c);
          for (size_t t = 0; t < gs1.size(); ++t) gs1[t] += tmp[t];
          // grad_x = s1^T . grad_y
          gemm_tn(s1.data(), gy.data(), gi.data() + static_cast<size_t>(b) * c * hw, k, c, hw);
        }
        Tensor t1({k, c}), t2({c, k});
        for (std::int64_t t = 0; t < t1.size(); ++t) t1[t] = static_cast<float>(gs1[static_cast<size_t>(t)]);
        for (std::int64_t t = 0; t < t2.size(); ++t) t2[t] = static_cast<float>(gs2[static_cast<size_t>(t)]);
        emit_param_grad(l.name + ".s1", std::move(t1));
        emit_param_grad(l.name + ".s2", std::move(t2));
        add_grad(ins[0], std::move(gi));
        break;
      }
      case LayerKind::Compress:
        throw StateError("compress layers are inference-only; train with projection layers");
      default:
        throw ConfigError("unhandled layer kind in backward");
    }
  }

  // Trainable parameters never touched by the walk (defensive) get zeros so
  // the gradient map keys are exactly the trainable set.
  for (const auto& [key, p] : net.params)
    if (p.trainable && !out.count(key)) out[key] = Tensor(p.value.shape());
  return out;
}

XentResult softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw DimensionError("softmax_xent expects [batch, classes] logits, got " + logits.shape_str());
  const int B = logits.dim(0), C = logits.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw DimensionError("softmax_xent got " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(B));
  XentResult res;
  res.grad = Tensor({B, C});
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    int y = labels[static_cast<size_t>(b)];
    if (y < 0 || y >= C)
      throw ParamError("label " + std::to_string(y) + " out of range [0," + std::to_string(C) + ")");
    double mx = logits.at(b, 0);
    for (int c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.at(b, c)));
    double denom = 0.0;
    for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(logits.at(b, c)) - mx);
    double logz = std::log(denom) + mx;
    loss += logz - static_cast<double>(logits.at(b, y));
    for (int c = 0; c < C; ++c) {
      double p = std::exp(static_cast<double>(logits.at(b, c)) - logz);
      res.grad.at(b, c) = static_cast<float>((p - (c == y ? 1.0 : 0.0)) / B);
    }
  }
  res.loss = static_cast<float>(loss / B);
  return res;
}

std::vector<ActivationRecord> classify_storage(const NetworkGraph& net) {
  net.validate();
  auto shapes = infer_shapes(net);
  auto consumers = net.consumer_map();

  auto layer_of = [&](const std::string& name) -> const LayerSpec* { return net.find(name); };

  // Consumers with Flatten and SoftmaxXent resolved through (they are views /
  // loss markers, not real users of storage).
  std::map<std::string, std::vector<const LayerSpec*>> eff;
  std::function<void(const std::string&, std::vector<const LayerSpec*>&)> collect =
      [&](const std::string& name, std::vector<const LayerSpec*>& outv) {
        auto it = consumers.find(name);
        if (it == consumers.end()) return;
        for (const auto& cn : it->second) {
          const LayerSpec* c = layer_of(cn);
          if (!c) continue;
          if (c->kind == LayerKind::Flatten || c->kind == LayerKind::SoftmaxXent)
            collect(c->name, outv);
          else
            outv.push_back(c);
        }
      };
  for (const auto& l : net.layers) {
    std::vector<const LayerSpec*> v;
    collect(l.name, v);
    eff[l.name] = std::move(v);
  }

  std::map<std::string, StorageClass> cls;
  for (const auto& l : net.layers) {
    if (l.kind == LayerKind::SoftmaxXent) continue;
    if (l.kind == LayerKind::Flatten) {
      cls[l.name] = StorageClass::Fused;  // alias of its producer
      continue;
    }
    const auto& cons = eff.at(l.name);
    StorageClass c;
    if (cons.size() >= 2) {
      c = StorageClass::Stored;  // fan-out must be materialized
    } else if (cons.empty()) {
      c = StorageClass::Stored;  // network output
    } else {
      const LayerSpec* k = cons[0];
      bool fused = k->kind == LayerKind::ReLU || k->kind == LayerKind::ResidualAdd ||
                   (k->kind == LayerKind::MaxPool2x2 && l.kind == LayerKind::ReLU);
      c = fused ? StorageClass::Fused : StorageClass::Stored;
    }
    cls[l.name] = c;
  }

  // Chain heads: walk back over fused single-consumer producers.
  auto chain_head = [&](const std::string& start) {
    std::string cur = start;
    while (true) {
      int idx = net.layer_index(cur);
      auto ins = net.resolved_inputs(idx);
      const std::string& p = ins[0];
      if (p == "input") break;
      const LayerSpec* pl = layer_of(p);
      if (!pl) break;
      if (pl->kind == LayerKind::Flatten || pl->kind == LayerKind::SoftmaxXent) {
        cur = p;
        continue;
      }
      auto cit = cls.find(p);
      if (cit == cls.end() || cit->second != StorageClass::Fused) break;
      if (eff.at(p).size() != 1) break;
      cur = p;
    }
    return cur;
  };

  std::vector<ActivationRecord> recs;
  for (const auto& l : net.layers) {
    if (l.kind == LayerKind::SoftmaxXent) continue;
    ActivationRecord r;
    r.producer = l.name;
    r.storage_class = cls.at(l.name);
    r.site = r.storage_class == StorageClass::Stored ? chain_head(l.name) : l.name;
    auto s = shapes.at(l.name);
    r.channels = s[0];
    r.m = s[1];
    r.n = s[2];
    recs.push_back(std::move(r));
  }
  return recs;
}

std::pair<Tensor, Tensor> fold_batchnorm(const Tensor& w, const Tensor& bias, const Tensor& gamma,
                                         const Tensor& beta, const Tensor& mean, const Tensor& var,
                                         float eps) {
  int co = w.dim(0);
  if (gamma.size() != co || beta.size() != co || mean.size() != co || var.size() != co ||
      bias.size() != co)
    throw DimensionError("fold_batchnorm: per-channel vectors must have length " +
                         std::to_string(co));
  Tensor wf = w;
  Tensor bf = bias;
  std::int64_t per = w.size() / co;
  for (int o = 0; o < co; ++o) {
    float scale = gamma[o] / std::sqrt(var[o] + eps);
    for (std::int64_t t = 0; t < per; ++t) wf[o * per + t] *= scale;
    bf[o] = (bias[o] - mean[o]) * scale + beta[o];
  }
  return {std::move(wf), std::move(bf)};
}

}  // namespace ceilc
