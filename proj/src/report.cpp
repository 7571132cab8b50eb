// SPDX-License-Identifier: Apache-2.0
#include "ceil/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace ceilc {

std::string report_csv(const FeatureMapInventory& inv, const CeilingPlan* plan) {
  std::ostringstream os;
  os << "site,c,m,n,elements,storage_class,assigned_k,compressed_elements\n";
  for (const auto& e : inv.entries) {
    os << e.site << "," << e.channels << "," << e.m << "," << e.n << "," << e.elements << ","
       << (e.storage_class == StorageClass::Stored ? "stored" : "fused") << ",";
    const PlanAssignment* a = nullptr;
    if (plan) {
      auto it = plan->assignments.find(e.site);
      if (it != plan->assignments.end()) a = &it->second;
    }
    if (a)
      os << a->k << "," << a->compressed_elements;
    else
      os << "," << e.elements;
    os << "\n";
  }
  return os.str();
}

namespace {

std::string fmt_factor(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << v;
  return os.str();
}

}  // namespace

std::string report_svg(const FeatureMapInventory& inv, const CeilingPlan* plan,
                       const std::string& title) {
  const int n = static_cast<int>(inv.entries.size());
  const int bar_w = 14, gap = 8, pair_w = 2 * bar_w + gap;
  const int margin_l = 70, margin_r = 90, margin_t = 40, margin_b = 90;
  const int plot_h = 260;
  const int width = margin_l + margin_r + std::max(1, n) * pair_w + (n - 1) * gap;
  const int height = margin_t + plot_h + margin_b;

  long long max_e = std::max<long long>(1, inv.max_elements());
  auto ybar = [&](long long v) {
    return static_cast<double>(plot_h) * static_cast<double>(v) / static_cast<double>(max_e);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<style>text{font-family:sans-serif;font-size:10px}</style>\n";
  os << "<text x=\"" << margin_l << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
  // axis
  os << "<line x1=\"" << margin_l - 6 << "\" y1=\"" << margin_t + plot_h << "\" x2=\""
     << width - margin_r + 10 << "\" y2=\"" << margin_t + plot_h
     << "\" stroke=\"#444\" stroke-width=\"1\"/>\n";
  os << "<text x=\"8\" y=\"" << margin_t + 8 << "\">" << max_e << "</text>\n";
  os << "<text x=\"8\" y=\"" << margin_t + plot_h << "\">0</text>\n";

  for (int i = 0; i < n; ++i) {
    const auto& e = inv.entries[static_cast<size_t>(i)];
    int x = margin_l + i * (pair_w + gap);
    double ho = ybar(e.elements);
    os << "<rect x=\"" << x << "\" y=\"" << margin_t + plot_h - ho << "\" width=\"" << bar_w
       << "\" height=\"" << ho << "\" fill=\"#f2a0b5\"/>\n";  // original: pink
    long long ce = plan ? plan->planned_elements(e) : e.elements;
    double hc = ybar(ce);
    os << "<rect x=\"" << x + bar_w + 2 << "\" y=\"" << margin_t + plot_h - hc << "\" width=\""
       << bar_w << "\" height=\"" << hc << "\" fill=\"#6699dd\"/>\n";  // compressed: blue
    os << "<text x=\"" << x + bar_w << "\" y=\"" << margin_t + plot_h + 10 << "\" transform=\"rotate(60 "
       << x + bar_w << " " << margin_t + plot_h + 10 << ")\">" << e.site << "</text>\n";
  }
  if (plan) {
    double yc = margin_t + plot_h - ybar(plan->ceiling_elements);
    os << "<line x1=\"" << margin_l - 6 << "\" y1=\"" << yc << "\" x2=\"" << width - margin_r + 10
       << "\" y2=\"" << yc << "\" stroke=\"#333\" stroke-width=\"1\" stroke-dasharray=\"5,4\"/>\n";
    os << "<text x=\"" << width - margin_r + 14 << "\" y=\"" << yc + 4 << "\">"
       << fmt_factor(plan->ceiling_factor) << "x</text>\n";
    os << "<text x=\"" << margin_l << "\" y=\"" << height - 12 << "\">overall compression "
       << fmt_factor(plan->overall_compression) << "x (ceiling " << plan->ceiling_elements
       << " elements)</text>\n";
  }
  // legend
  os << "<rect x=\"" << width - margin_r + 4 << "\" y=\"" << margin_t << "\" width=\"10\" height=\"10\" fill=\"#f2a0b5\"/>"
     << "<text x=\"" << width - margin_r + 18 << "\" y=\"" << margin_t + 9 << "\">original</text>\n";
  os << "<rect x=\"" << width - margin_r + 4 << "\" y=\"" << margin_t + 14
     << "\" width=\"10\" height=\"10\" fill=\"#6699dd\"/>"
     << "<text x=\"" << width - margin_r + 18 << "\" y=\"" << margin_t + 23 << "\">compressed</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string compression_report(const FeatureMapInventory& inv, const CeilingPlan* plan,
                               const std::string& format) {
  if (format == "csv") return report_csv(inv, plan);
  if (format == "svg") return report_svg(inv, plan, "stored feature maps");
  throw ParamError("unknown report format '" + format + "' (expected csv or svg)");
}

}  // namespace ceilc
