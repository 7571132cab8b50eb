// SPDX-License-Identifier: Apache-2.0
#include "ceil/planner.hpp"

#include <algorithm>
#include <cmath>

#include "ceil/projection.hpp"

namespace ceilc {

long long FeatureMapInventory::total_elements() const {
  long long t = 0;
  for (const auto& e : entries) t += e.elements;
  return t;
}

long long FeatureMapInventory::max_elements() const {
  long long m = 0;
  for (const auto& e : entries) m = std::max(m, e.elements);
  return m;
}

FeatureMapInventory profile(const NetworkGraph& arch, std::array<int, 3> input_shape) {
  NetworkGraph net = arch;
  net.input_shape = input_shape;
  net.validate();

  auto consumers = net.consumer_map();
  FeatureMapInventory inv;
  inv.input_shape = input_shape;
  for (const auto& rec : classify_storage(net)) {
    if (rec.storage_class != StorageClass::Stored) continue;
    InventoryEntry e;
    e.site = rec.site;
    e.producer = rec.producer;
    e.channels = rec.channels;
    e.m = rec.m;
    e.n = rec.n;
    e.elements = static_cast<long long>(rec.channels) * rec.m * rec.n;
    e.storage_class = StorageClass::Stored;
    const LayerSpec* prod = net.find(rec.producer);
    const LayerSpec* site_layer = net.find(rec.site);
    e.head = (prod && (prod->kind == LayerKind::Dense || prod->kind == LayerKind::GlobalAvgPool)) ||
             (site_layer && (site_layer->kind == LayerKind::Dense ||
                             site_layer->kind == LayerKind::GlobalAvgPool));
    auto cit = consumers.find(rec.producer);
    if (cit != consumers.end()) {
      // resolve through flatten: the real consumer of the storage
      std::vector<std::string> pending = cit->second;
      while (!pending.empty()) {
        std::string cn = pending.back();
        pending.pop_back();
        const LayerSpec* c = net.find(cn);
        if (!c) continue;
        if (c->kind == LayerKind::Flatten || c->kind == LayerKind::SoftmaxXent) {
          auto fit = consumers.find(cn);
          if (fit != consumers.end())
            pending.insert(pending.end(), fit->second.begin(), fit->second.end());
          continue;
        }
        e.consumers.push_back({c->name, c->kind, c->ksize, c->out_ch});
      }
    }
    inv.entries.push_back(std::move(e));
  }
  return inv;
}

double largest_fm_ratio(const FeatureMapInventory& inv, long long total_params) {
  if (total_params <= 0) throw ParamError("total parameter count must be positive");
  if (inv.entries.empty()) throw ConfigError("inventory is empty");
  return static_cast<double>(inv.max_elements()) / static_cast<double>(total_params);
}

long long CeilingPlan::planned_elements(const InventoryEntry& e) const {
  auto it = assignments.find(e.site);
  if (it == assignments.end()) return e.elements;
  return it->second.compressed_elements;
}

CeilingPlan plan_ceiling_elements(const FeatureMapInventory& inv, long long ceiling) {
  if (ceiling < 1) throw ParamError("ceiling must be at least one element");
  CeilingPlan plan;
  plan.ceiling_elements = ceiling;
  long long max_elems = inv.max_elements();
  plan.ceiling_factor = max_elems > 0 ? static_cast<double>(max_elems) / static_cast<double>(ceiling) : 1.0;

  std::vector<std::string> blocking;
  for (const auto& e : inv.entries) {
    plan.original_total += e.elements;
    if (e.elements <= ceiling) continue;  // "at or below" stays untouched
    long long spatial = static_cast<long long>(e.m) * e.n;
    if (e.head) {
      blocking.push_back(e.site + " (classifier head, " + std::to_string(e.elements) + " elements)");
      continue;
    }
    long long k = ceiling / spatial;  // maximal rank under the ceiling
    if (k < 1) {
      blocking.push_back(e.site + " (spatial " + std::to_string(spatial) + " > ceiling)");
      continue;
    }
    k = std::min(k, static_cast<long long>(e.channels) - 1);
    PlanAssignment a;
    a.k = static_cast<int>(k);
    a.compressed_elements = k * spatial;
    // Overhead bound against the consuming convolution; explicit-lift
    // consumers (dense/residual) always pay for S1 and S2.
    const ConsumerInfo* conv = nullptr;
    for (const auto& c : e.consumers)
      if (c.kind == LayerKind::Conv2d) conv = &c;
    if (conv) {
      a.consumer = conv->name;
      a.overhead_ok = overhead_check(conv->ksize, conv->out_ch, e.channels, k);
      long long pp = static_cast<long long>(conv->ksize) * conv->ksize;
      a.param_delta = k * (pp * conv->out_ch + e.channels) - pp * conv->out_ch * e.channels;
      if (!a.overhead_ok)
        plan.warnings.push_back("site " + e.site + ": k=" + std::to_string(k) +
                                " fails the overhead bound against conv '" + conv->name +
                                "' (param delta +" + std::to_string(a.param_delta) + ")");
    } else {
      a.consumer = e.consumers.empty() ? "" : e.consumers.front().name;
      a.overhead_ok = false;
      a.param_delta = 2 * k * e.channels;  // explicit lift keeps S1 and S2
      plan.warnings.push_back("site " + e.site + ": lift stays explicit (consumer '" + a.consumer +
                              "'), parameter budget grows by " + std::to_string(a.param_delta));
    }
    plan.assignments[e.site] = std::move(a);
  }
  if (!blocking.empty()) {
    std::string msg = "ceiling " + std::to_string(ceiling) + " is infeasible; blocking sites:";
    for (const auto& b : blocking) msg += " " + b + ";";
    throw InfeasibleError(msg);
  }
  for (const auto& e : inv.entries) plan.planned_total += plan.planned_elements(e);
  plan.overall_compression = plan.planned_total > 0
                                 ? static_cast<double>(plan.original_total) / static_cast<double>(plan.planned_total)
                                 : 1.0;
  return plan;
}

CeilingPlan plan_ceiling(const FeatureMapInventory& inv, double ceiling_factor) {
  if (!(ceiling_factor >= 1.0)) throw ParamError("ceiling factor must be >= 1");
  long long ceiling = static_cast<long long>(std::floor(static_cast<double>(inv.max_elements()) / ceiling_factor));
  return plan_ceiling_elements(inv, ceiling);
}

}  // namespace ceilc
