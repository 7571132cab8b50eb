// SPDX-License-Identifier: Apache-2.0
#include "ceil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "ceil/projection.hpp"
#include "ceil/svd.hpp"

namespace ceilc {

void TrainConfig::check() const {
  if (!(lr > 0.0f)) throw ParamError("lr must be positive");
  if (!(plateau_factor > 0.0f && plateau_factor < 1.0f))
    throw ParamError("plateau_factor must be in (0,1)");
  if (batch_size < 1) throw ParamError("batch_size must be >= 1");
  if (baseline_epochs < 1) throw ParamError("baseline_epochs must be >= 1");
  if (epochs_per_insertion < 0 || final_epochs < 0) throw ParamError("epoch counts must be >= 0");
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) throw ParamError("val_fraction must be in (0,0.5)");
  if (init != "svd" && init != "pca" && init != "random")
    throw ParamError("init must be svd, pca or random");
}

float reduce_on_plateau(const std::vector<float>& history, const TrainConfig& cfg) {
  if (history.empty()) throw ParamError("reduce_on_plateau needs a non-empty history");
  constexpr float kMinDelta = 1e-4f;
  constexpr float kFloor = 1e-6f;
  float lr = cfg.lr;
  float best = -1.0f;
  int wait = 0;
  for (float acc : history) {
    if (acc > best + kMinDelta) {
      best = acc;
      wait = 0;
    } else if (++wait >= cfg.plateau_patience) {
      lr = std::max(lr * cfg.plateau_factor, kFloor);
      wait = 0;
    }
  }
  return lr;
}

float evaluate(const NetworkGraph& net, const LabeledDataset& ds, int batch_size) {
  if (ds.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  long long correct = 0;
  for (const auto& idx : batch_indices(ds.size(), batch_size, 0, false)) {
    Batch b = gather(ds, idx);
    Tensor logits = forward(net, b.images, false).logits;
    for (int r = 0; r < logits.dim(0); ++r) {
      int arg = 0;
      for (int c = 1; c < logits.dim(1); ++c)
        if (logits.at(r, c) > logits.at(r, arg)) arg = c;
      if (arg == b.labels[static_cast<size_t>(r)]) ++correct;
    }
  }
  return static_cast<float>(static_cast<double>(correct) / ds.size());
}

void sgd_step(NetworkGraph& net, const GradMap& grads, std::map<std::string, Tensor>& momentum,
              float lr, float mu) {
  for (const auto& [key, g] : grads) {
    auto pit = net.params.find(key);
    if (pit == net.params.end() || !pit->second.trainable) continue;
    Tensor& p = pit->second.value;
    auto mit = momentum.find(key);
    if (mit == momentum.end()) mit = momentum.emplace(key, Tensor(p.shape())).first;
    Tensor& v = mit->second;
    for (std::int64_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

namespace {

std::uint32_t epoch_seed(const TrainConfig& cfg, int stage, int epoch) {
  return cfg.seed * 2654435761u + static_cast<std::uint32_t>(stage) * 1000003u +
         static_cast<std::uint32_t>(epoch) * 7919u + 17u;
}

void log_header(std::ostream* log) {
  if (!log) return;
  (*log) << "# scheduler=reduce_on_plateau;reset=per-stage\n";
  (*log) << "stage,epoch,lr,train_loss,val_accuracy\n";
}

void tie_pairs(NetworkGraph& net) {
  for (const auto& l : net.layers) {
    if (l.kind != LayerKind::Projection) continue;
    Tensor& s1 = net.params.at(l.name + ".s1").value;
    Tensor& s2 = net.params.at(l.name + ".s2").value;
    for (int i = 0; i < s1.dim(0); ++i)
      for (int j = 0; j < s1.dim(1); ++j) {
        float avg = 0.5f * (s1.at(i, j) + s2.at(j, i));
        s1.at(i, j) = avg;
        s2.at(j, i) = avg;
      }
  }
}

struct EpochRunner {
  NetworkGraph& net;
  std::map<std::string, Tensor>& momentum;
  const LabeledDataset& train;
  const LabeledDataset& val;
  const TrainConfig& cfg;
  int stage;
  std::ostream* log;

  Checkpoint best;
  std::vector<float> history;

  void snapshot_if_best(int epoch, float val_acc) {
    if (best.epoch < 0 || val_acc > best.val_accuracy) {
      best.net = net;
      best.momentum = momentum;
      best.epoch = epoch;
      best.stage = stage;
      best.val_accuracy = val_acc;
    }
  }

  // Evaluation of the starting state counts as epoch 0 of the stage.
  void seed_with_initial_eval() {
    best.epoch = -1;
    float acc = evaluate(net, val);
    snapshot_if_best(0, acc);
  }

  void run(int epochs) {
    for (int e = 1; e <= epochs; ++e) {
      float lr = history.empty() ? cfg.lr : reduce_on_plateau(history, cfg);
      double loss_sum = 0.0;
      int batches = 0;
      for (const auto& idx :
           batch_indices(train.size(), cfg.batch_size, epoch_seed(cfg, stage, e), true)) {
        Batch b = gather(train, idx);
        ForwardResult fr = forward(net, b.images, true);
        XentResult xr = softmax_xent(fr.logits, b.labels);
        if (!std::isfinite(xr.loss))
          throw NumericalError("loss is not finite at stage " + std::to_string(stage) +
                               ", epoch " + std::to_string(e));
        GradMap grads = backward(net, fr.cache, xr.grad);
        sgd_step(net, grads, momentum, lr, cfg.momentum);
        if (cfg.tie_projections) tie_pairs(net);
        loss_sum += xr.loss;
        ++batches;
      }
      float val_acc = evaluate(net, val);
      history.push_back(val_acc);
      if (log)
        (*log) << stage << "," << e << "," << lr << "," << (loss_sum / std::max(batches, 1)) << ","
               << val_acc << "\n";
      snapshot_if_best(e, val_acc);
    }
  }
};

}  // namespace

Checkpoint train_baseline(const NetworkGraph& net_in, const LabeledDataset& train_set,
                          const TrainConfig& cfg, std::ostream* log) {
  cfg.check();
  if (train_set.size() == 0) throw DataError("training dataset is empty");
  NetworkGraph net = net_in;
  for (auto& [key, p] : net.params) p.trainable = true;

  auto [tr_idx, val_idx] = split_indices(train_set.size(), cfg.val_fraction, cfg.seed);
  LabeledDataset tr = subset(train_set, tr_idx);
  LabeledDataset val = subset(train_set, val_idx);

  log_header(log);
  std::map<std::string, Tensor> momentum;
  EpochRunner runner{net, momentum, tr, val, cfg, 0, log};
  runner.seed_with_initial_eval();
  runner.run(cfg.baseline_epochs);
  return std::move(runner.best);
}

NetworkGraph insert_initialized_projection(const NetworkGraph& net, const SiteInit& si,
                                           const std::string& init,
                                           const LabeledDataset& sample_source,
                                           std::uint32_t seed) {
  // locate the stored record for the site
  std::string producer;
  int channels = 0;
  for (const auto& rec : classify_storage(net)) {
    if (rec.storage_class == StorageClass::Stored && rec.site == si.site) {
      producer = rec.producer;
      channels = rec.channels;
      break;
    }
  }
  if (producer.empty()) throw ConfigError("no stored activation named '" + si.site + "'");

  ProjectionPair pair;
  if (init == "random") {
    pair = random_init(channels, si.k, seed);
  } else if (init == "pca") {
    // channel statistics from one deterministic sample batch
    int nb = std::min(sample_source.size(), 128);
    std::vector<int> idx(static_cast<size_t>(nb));
    for (int i = 0; i < nb; ++i) idx[static_cast<size_t>(i)] = i;
    Batch b = gather(sample_source, idx);
    ForwardResult fr = forward(net, b.images, true);
    auto it = fr.cache.values.find(producer);
    if (it == fr.cache.values.end())
      throw StateError("activation '" + producer + "' was not retained for pca sampling");
    const Tensor& acts = it->second;  // [B,c,h,w]
    std::vector<Tensor> maps;
    int chw = static_cast<int>(acts.size() / acts.dim(0));
    for (int i = 0; i < acts.dim(0); ++i) {
      Tensor m({acts.dim(1), acts.dim(2), acts.dim(3)});
      for (int t = 0; t < chw; ++t) m[t] = acts[static_cast<std::int64_t>(i) * chw + t];
      maps.push_back(std::move(m));
    }
    pair = pca_init(maps, si.k);
  } else {  // svd of the next layer's weights
    // first conv (or dense) consumer, resolving through flatten
    auto consumers = net.consumer_map();
    std::vector<std::string> pending = consumers.count(producer) ? consumers.at(producer)
                                                                 : std::vector<std::string>{};
    const LayerSpec* conv = nullptr;
    const LayerSpec* dense = nullptr;
    while (!pending.empty()) {
      std::string cn = pending.front();
      pending.erase(pending.begin());
      const LayerSpec* c = net.find(cn);
      if (!c) continue;
      // flatten is a view; global average pooling commutes with a channel
      // projection, so both resolve through to the real consumer
      if (c->kind == LayerKind::Flatten || c->kind == LayerKind::GlobalAvgPool) {
        if (consumers.count(cn))
          pending.insert(pending.end(), consumers.at(cn).begin(), consumers.at(cn).end());
      } else if (c->kind == LayerKind::Conv2d && !conv) {
        conv = c;
      } else if (c->kind == LayerKind::Dense && !dense) {
        dense = c;
      }
    }
    if (conv) {
      pair = svd_init(net.params.at(conv->name + ".w").value, si.k);
    } else if (dense) {
      // dense weights [units, c*h*w] reshuffled so channels are the right
      // factor, then the same truncated-SVD initialization
      const Tensor& w = net.params.at(dense->name + ".w").value;
      int units = w.dim(0);
      int hw = w.dim(1) / channels;
      Tensor what({units * hw, channels});
      for (int u = 0; u < units; ++u)
        for (int ch = 0; ch < channels; ++ch)
          for (int t = 0; t < hw; ++t) what.at(u * hw + t, ch) = w.at(u, ch * hw + t);
      SvdResult svd = truncated_svd(what, si.k);
      pair.k = si.k;
      pair.s2 = svd.v;
      pair.s1 = transpose(svd.v);
    } else {
      throw ConfigError("site '" + si.site + "' has no convolution or dense consumer for svd init");
    }
  }
  pair.site = si.site;
  return insert_projection(net, pair);
}

Checkpoint progressive_compress(const Checkpoint& base, const CeilingPlan& plan,
                                const LabeledDataset& train_set, const TrainConfig& cfg,
                                std::ostream* log) {
  cfg.check();
  if (train_set.size() == 0) throw DataError("training dataset is empty");
  if (plan.assignments.empty()) return base;

  Checkpoint cur = base;
  for (auto& [key, p] : cur.net.params) p.trainable = false;
  cur.momentum.clear();

  // insertion order: graph (topological) order of the site layers
  std::vector<std::string> sites;
  for (const auto& [site, a] : plan.assignments) sites.push_back(site);
  std::sort(sites.begin(), sites.end(), [&](const std::string& a, const std::string& b) {
    return cur.net.layer_index(a) < cur.net.layer_index(b);
  });
  for (const auto& s : sites)
    if (cur.net.layer_index(s) < 0)
      throw ConfigError("plan site '" + s + "' is not a layer of the base network");

  auto [tr_idx, val_idx] = split_indices(train_set.size(), cfg.val_fraction, cfg.seed);
  LabeledDataset tr = subset(train_set, tr_idx);
  LabeledDataset val = subset(train_set, val_idx);

  log_header(log);
  int stage = 0;
  for (const auto& site : sites) {
    ++stage;
    const PlanAssignment& a = plan.assignments.at(site);
    cur.net = insert_initialized_projection(cur.net, SiteInit{site, a.k}, cfg.init, tr,
                                            epoch_seed(cfg, stage, 0));
    EpochRunner runner{cur.net, cur.momentum, tr, val, cfg, stage, log};
    runner.seed_with_initial_eval();
    runner.run(cfg.epochs_per_insertion);
    // next stage starts from the best checkpoint of this one
    cur = std::move(runner.best);
  }

  // end-to-end training of all inserted projections
  ++stage;
  EpochRunner runner{cur.net, cur.momentum, tr, val, cfg, stage, log};
  runner.seed_with_initial_eval();
  runner.run(cfg.final_epochs);
  return std::move(runner.best);
}

}  // namespace ceilc
