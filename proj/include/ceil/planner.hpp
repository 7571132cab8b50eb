// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ceil/network.hpp"

namespace ceilc {

/// A consumer of a stored activation, as the planner needs it for the
/// overhead bound: the kernel size and output channels when it is a conv.
struct ConsumerInfo {
  std::string name;
  LayerKind kind;
  int ksize = 0;
  int out_ch = 0;
};

struct InventoryEntry {
  std::string site;
  std::string producer;
  int channels = 0;
  int m = 0;
  int n = 0;
  long long elements = 0;
  StorageClass storage_class = StorageClass::Stored;
  bool head = false;  // classifier-head activation (dense/gap output): never assigned
  std::vector<ConsumerInfo> consumers;
};

/// Stored activations of a shape-checked architecture, in graph order.
struct FeatureMapInventory {
  std::vector<InventoryEntry> entries;
  std::array<int, 3> input_shape{0, 0, 0};

  long long total_elements() const;
  long long max_elements() const;
};

FeatureMapInventory profile(const NetworkGraph& arch, std::array<int, 3> input_shape);

/// Largest stored feature map / total parameter elements.
double largest_fm_ratio(const FeatureMapInventory& inv, long long total_params);

struct PlanAssignment {
  int k = 0;
  long long compressed_elements = 0;
  bool overhead_ok = true;       // overhead bound against the consumer conv
  long long param_delta = 0;     // element change in the parameter budget
  std::string consumer;
};

struct CeilingPlan {
  long long ceiling_elements = 0;
  double ceiling_factor = 1.0;  // largest original map / ceiling
  std::map<std::string, PlanAssignment> assignments;
  long long original_total = 0;
  long long planned_total = 0;
  double overall_compression = 1.0;
  std::vector<std::string> warnings;

  long long planned_elements(const InventoryEntry& e) const;
};

/// Maximal rank under the ceiling at every site that exceeds it:
/// k = floor(ceiling / (m*n)), requiring 1 <= k < c. Sites exactly at the
/// ceiling stay uncompressed. Throws InfeasibleError when a site cannot be
/// brought under the ceiling.
CeilingPlan plan_ceiling_elements(const FeatureMapInventory& inv, long long ceiling_elements);
/// Ceiling given as a factor of the largest stored map.
CeilingPlan plan_ceiling(const FeatureMapInventory& inv, double ceiling_factor);

}  // namespace ceilc
