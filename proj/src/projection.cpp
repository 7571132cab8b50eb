// SPDX-License-Identifier: Apache-2.0
#include "ceil/projection.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ceil/svd.hpp"

namespace ceilc {

std::string projection_layer_name(const std::string& site) { return site + ".proj"; }

namespace {

// Pads column-orthonormal v [c,r] to k columns with canonical-basis
// Gram-Schmidt completions (deterministic). Needed when the requested rank
// exceeds min(d1,d2) of the decomposed matrix; the extra directions carry no
// signal yet but become trainable capacity.
Tensor extend_orthonormal_columns(const Tensor& v, int k) {
  int c = v.dim(0), r = v.dim(1);
  if (r >= k) return v;
  Tensor out({c, k});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < r; ++j) out.at(i, j) = v.at(i, j);
  for (int j = r; j < k; ++j) {
    std::vector<double> best(static_cast<size_t>(c), 0.0);
    double best_norm = -1.0;
    for (int cand = 0; cand < c; ++cand) {
      std::vector<double> e(static_cast<size_t>(c), 0.0);
      e[static_cast<size_t>(cand)] = 1.0;
      for (int prev = 0; prev < j; ++prev) {
        double dot = 0.0;
        for (int i = 0; i < c; ++i) dot += e[static_cast<size_t>(i)] * out.at(i, prev);
        for (int i = 0; i < c; ++i) e[static_cast<size_t>(i)] -= dot * out.at(i, prev);
      }
      double norm = 0.0;
      for (double t : e) norm += t * t;
      norm = std::sqrt(norm);
      if (norm > best_norm) {
        best_norm = norm;
        best = std::move(e);
      }
      if (best_norm > 0.9) break;
    }
    for (int i = 0; i < c; ++i) out.at(i, j) = static_cast<float>(best[static_cast<size_t>(i)] / best_norm);
  }
  return out;
}

}  // namespace

Tensor reshape_w(const Tensor& w) {
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw DimensionError("reshape_w expects [c_o,c,p,p], got " + w.shape_str());
  int co = w.dim(0), c = w.dim(1), p = w.dim(2);
  Tensor out({p * p * co, c});
  for (int o = 0; o < co; ++o)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) out.at(o * p * p + i * p + j, ch) = w.at(o, ch, i, j);
  return out;
}

ProjectionPair svd_init(const Tensor& w_next, int k) {
  Tensor what = reshape_w(w_next);
  int c = what.dim(1);
  if (k < 1 || k >= c)
    throw ParamError("svd_init rank k=" + std::to_string(k) + " must satisfy 1 <= k < c=" +
                     std::to_string(c));
  SvdResult svd = truncated_svd(what, std::min(k, std::min(what.dim(0), what.dim(1))));
  ProjectionPair pair;
  pair.k = k;
  pair.s2 = extend_orthonormal_columns(svd.v, k);  // [c,k]
  pair.s1 = transpose(pair.s2);                    // [k,c]
  return pair;
}

ProjectionPair pca_init(const std::vector<Tensor>& sample_maps, int k) {
  if (sample_maps.empty()) throw ParamError("pca_init needs at least one sample map");
  int c = sample_maps.front().dim(0);
  long long cols = 0;
  for (const auto& s : sample_maps) {
    if (s.rank() != 3 || s.dim(0) != c)
      throw DimensionError("pca_init sample has shape " + s.shape_str() + ", expected [" +
                           std::to_string(c) + ",m,n]");
    cols += static_cast<long long>(s.dim(1)) * s.dim(2);
  }
  if (k < 1 || k >= c)
    throw ParamError("pca_init rank k=" + std::to_string(k) + " must satisfy 1 <= k < c=" +
                     std::to_string(c));
  Tensor x({c, static_cast<int>(cols)});
  long long off = 0;
  for (const auto& s : sample_maps) {
    int hw = s.dim(1) * s.dim(2);
    for (int ch = 0; ch < c; ++ch)
      for (int t = 0; t < hw; ++t)
        x.at(ch, static_cast<int>(off) + t) = s[static_cast<std::int64_t>(ch) * hw + t];
    off += hw;
  }
  SvdResult svd = truncated_svd(x, std::min(k, std::min(x.dim(0), x.dim(1))));
  ProjectionPair pair;
  pair.k = k;
  // eigenvectors of the channel second-moment
  pair.s2 = extend_orthonormal_columns(svd.u, k);
  pair.s1 = transpose(pair.s2);
  return pair;
}

ProjectionPair random_init(int c, int k, std::uint32_t seed) {
  if (k < 1 || k >= c)
    throw ParamError("random_init rank k=" + std::to_string(k) + " must satisfy 1 <= k < c=" +
                     std::to_string(c));
  std::mt19937 rng(seed);
  auto uniform = [&]() { return (rng() >> 8) * (1.0 / 16777216.0); };
  auto normal = [&]() {
    double u1 = std::max(uniform(), 1e-12), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  // Gaussian columns, then modified Gram-Schmidt.
  std::vector<std::vector<double>> cols(static_cast<size_t>(k), std::vector<double>(static_cast<size_t>(c)));
  for (auto& col : cols)
    for (auto& v : col) v = normal();
  for (int j = 0; j < k; ++j) {
    for (int prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (int i = 0; i < c; ++i) dot += cols[j][i] * cols[prev][i];
      for (int i = 0; i < c; ++i) cols[j][i] -= dot * cols[prev][i];
    }
    double norm = 0.0;
    for (int i = 0; i < c; ++i) norm += cols[j][i] * cols[j][i];
    norm = std::sqrt(norm);
    if (norm < 1e-8) {  // vanishing draw; fall back to a basis vector
      std::fill(cols[j].begin(), cols[j].end(), 0.0);
      cols[j][static_cast<size_t>(j)] = 1.0;
      norm = 1.0;
    }
    for (int i = 0; i < c; ++i) cols[j][i] /= norm;
  }
  ProjectionPair pair;
  pair.k = k;
  pair.s2 = Tensor({c, k});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < k; ++j) pair.s2.at(i, j) = static_cast<float>(cols[static_cast<size_t>(j)][static_cast<size_t>(i)]);
  pair.s1 = transpose(pair.s2);
  return pair;
}

namespace {

struct SiteInfo {
  std::string producer;
  int channels;
};

SiteInfo find_site(const NetworkGraph& net, const std::string& site) {
  for (const auto& rec : classify_storage(net)) {
    if (rec.storage_class != StorageClass::Stored || rec.site != site) continue;
    return {rec.producer, rec.channels};
  }
  throw ConfigError("no stored activation named '" + site + "' in the network");
}

}  // namespace

NetworkGraph insert_projection(const NetworkGraph& net, const ProjectionPair& pair) {
  if (pair.s1.rank() != 2 || pair.s2.rank() != 2 || pair.s1.dim(0) != pair.k ||
      pair.s2.dim(1) != pair.k || pair.s1.dim(1) != pair.s2.dim(0))
    throw DimensionError("projection pair has inconsistent shapes s1=" + pair.s1.shape_str() +
                         " s2=" + pair.s2.shape_str());
  std::string pname = projection_layer_name(pair.site);
  if (net.find(pname))
    throw ConfigError("site '" + pair.site + "' already carries a projection");
  SiteInfo si = find_site(net, pair.site);
  if (pair.s1.dim(1) != si.channels)
    throw DimensionError("projection for site '" + pair.site + "' expects " +
                         std::to_string(pair.s1.dim(1)) + " channels, activation has " +
                         std::to_string(si.channels));
  const LayerSpec* prod = net.find(si.producer);
  if (prod && !(prod->kind == LayerKind::ReLU || prod->kind == LayerKind::MaxPool2x2 ||
                prod->kind == LayerKind::ResidualAdd))
    throw ConfigError("site '" + pair.site + "' is not a post-activation tensor (producer kind " +
                      layer_kind_name(prod->kind) + ")");

  NetworkGraph out = net;
  int pidx = out.layer_index(si.producer);
  LayerSpec proj;
  proj.kind = LayerKind::Projection;
  proj.name = pname;
  proj.rank = pair.k;
  proj.inputs = {si.producer};
  // Rewire explicit references; implicit (previous-layer) references follow
  // the insertion position automatically.
  for (auto& l : out.layers)
    for (auto& in : l.inputs)
      if (in == si.producer) in = pname;
  out.layers.insert(out.layers.begin() + pidx + 1, std::move(proj));
  out.params[pname + ".s1"] = Param{pair.s1, true};
  out.params[pname + ".s2"] = Param{pair.s2, true};
  out.validate();
  return out;
}

NetworkGraph remove_projection(const NetworkGraph& net, const std::string& site) {
  std::string pname = projection_layer_name(site);
  int idx = net.layer_index(pname);
  if (idx < 0) throw ConfigError("no projection at site '" + site + "'");
  NetworkGraph out = net;
  std::string producer = out.resolved_inputs(idx)[0];
  out.layers.erase(out.layers.begin() + idx);
  for (auto& l : out.layers)
    for (auto& in : l.inputs)
      if (in == pname) in = producer;
  out.params.erase(pname + ".s1");
  out.params.erase(pname + ".s2");
  out.validate();
  return out;
}

FoldResult fold_lift(const Tensor& w_next, const ProjectionPair& pair) {
  if (w_next.rank() != 4 || w_next.dim(2) != w_next.dim(3))
    throw DimensionError("fold_lift expects weights [c_o,c,p,p], got " + w_next.shape_str());
  int co = w_next.dim(0), c = w_next.dim(1), p = w_next.dim(2);
  if (pair.s2.rank() != 2 || pair.s2.dim(0) != c)
    throw DimensionError("fold_lift: s2 " + pair.s2.shape_str() + " does not match weights c=" +
                         std::to_string(c));
  int k = pair.s2.dim(1);
  FoldResult res;
  res.w_tilde = Tensor({co, k, p, p});
  for (int o = 0; o < co; ++o)
    for (int j = 0; j < k; ++j)
      for (int i = 0; i < p; ++i)
        for (int l = 0; l < p; ++l) {
          double acc = 0.0;
          for (int ch = 0; ch < c; ++ch)
            acc += static_cast<double>(w_next.at(o, ch, i, l)) * pair.s2.at(ch, j);
          res.w_tilde.at(o, j, i, l) = static_cast<float>(acc);
        }
  res.s1_kept = pair.s1;
  res.param_delta = static_cast<long long>(k) * (static_cast<long long>(p) * p * co + c) -
                    static_cast<long long>(p) * p * co * c;
  return res;
}

bool overhead_check(int p, int c_o, int c_i, long long k) {
  long long pp = static_cast<long long>(p) * p;
  return k * (pp * c_o + c_i) < pp * c_o * c_i;
}

NetworkGraph fold_network(const NetworkGraph& net, bool allow_explicit_lift) {
  NetworkGraph out = net;
  std::vector<std::string> proj_names;
  for (const auto& l : out.layers)
    if (l.kind == LayerKind::Projection) proj_names.push_back(l.name);

  for (const auto& pname : proj_names) {
    auto consumers = out.consumer_map();
    auto it = consumers.find(pname);
    std::vector<std::string> users = it == consumers.end() ? std::vector<std::string>{} : it->second;
    bool all_conv = !users.empty();
    for (const auto& u : users) {
      const LayerSpec* ul = out.find(u);
      if (!ul || ul->kind != LayerKind::Conv2d) all_conv = false;
    }
    if (!all_conv) {
      if (!allow_explicit_lift)
        throw ConfigError("projection '" + pname +
                          "' feeds a non-convolution consumer; pass allow_explicit_lift to keep "
                          "the lift as an explicit layer");
      continue;  // lift stays explicit; its elements remain in the parameter budget
    }
    ProjectionPair pair;
    pair.s1 = out.params.at(pname + ".s1").value;
    pair.s2 = out.params.at(pname + ".s2").value;
    pair.k = pair.s1.dim(0);
    for (const auto& u : users) {
      LayerSpec& conv = out.layers[static_cast<size_t>(out.layer_index(u))];
      Param& w = out.params.at(u + ".w");
      FoldResult fr = fold_lift(w.value, pair);
      w.value = fr.w_tilde;
      conv.in_ch = pair.k;
    }
    LayerSpec& pl = out.layers[static_cast<size_t>(out.layer_index(pname))];
    pl.kind = LayerKind::Compress;
    out.params.erase(pname + ".s2");
    out.params.at(pname + ".s1").trainable = false;
  }
  out.validate();
  return out;
}

}  // namespace ceilc
