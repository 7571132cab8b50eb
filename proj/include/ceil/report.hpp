// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "ceil/planner.hpp"

namespace ceilc {

/// Inventory/plan report. format is "csv" or "svg"; anything else is a
/// parameter error. plan may be null (inventory only).
std::string compression_report(const FeatureMapInventory& inv, const CeilingPlan* plan,
                               const std::string& format);

std::string report_csv(const FeatureMapInventory& inv, const CeilingPlan* plan);

/// Bar chart of per-site stored sizes: original (pink) vs compressed (blue)
/// with a dotted ceiling line labelled by the ceiling factor at its right
/// end. Self-contained SVG.
std::string report_svg(const FeatureMapInventory& inv, const CeilingPlan* plan,
                       const std::string& title);

}  // namespace ceilc
