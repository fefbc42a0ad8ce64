#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

namespace tdir::cli {

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr double kPlotTop = 50, kPlotHeight = 300, kLeft = 70, kSlot = 48, kGroupGap = 28;

double y_of(double auc) { return kPlotTop + (1.0 - auc) * kPlotHeight; }

const char* colour(Arm arm) { return arm == Arm::kPretrained ? "#2b6cb0" : "#dd6b20"; }

}  // namespace

BoxStats box_stats(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats of an empty list");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  return {v.front(), quantile(v, 0.25), median_of(values), quantile(v, 0.75), v.back()};
}

std::string auc_box_plot(const std::string& dataset, std::span<const EvalReport> reports) {
  std::map<std::size_t, std::vector<const EvalReport*>> by_size;
  for (const auto& r : reports) by_size[r.subjects_per_class].push_back(&r);
  for (auto& [size, group] : by_size) {
    std::stable_sort(group.begin(), group.end(), [](auto* a, auto* b) { return a->arm < b->arm; });
  }

  double width = kLeft + 20;
  for (const auto& [size, group] : by_size) width += kSlot * static_cast<double>(group.size()) + kGroupGap;
  width = std::max(width, 360.0);
  const double height = kPlotTop + kPlotHeight + 70;

  std::string svg;
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      width, height, width, height);
  svg += fmt::format("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
  svg += fmt::format("<text x=\"{:.1f}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">Test AUC: {}</text>\n",
                     width / 2, escape(dataset));

  // Axis and grid.
  for (int i = 0; i <= 10; ++i) {
    const double a = i / 10.0;
    const double y = y_of(a);
    svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.2f}\" x2=\"{:.1f}\" y2=\"{:.2f}\" stroke=\"#e2e8f0\"/>\n", kLeft,
                       y, width - 10, y);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.1f}</text>\n", kLeft - 6, y + 4, a);
  }
  svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", kLeft,
                     kPlotTop, kPlotTop + kPlotHeight);
  svg += fmt::format(
      "<text transform=\"translate(18 {:.1f}) rotate(-90)\" text-anchor=\"middle\">AUC</text>\n",
      kPlotTop + kPlotHeight / 2);

  double x = kLeft + kGroupGap / 2;
  for (const auto& [size, group] : by_size) {
    const double group_start = x;
    for (const auto* r : group) {
      const auto b = box_stats(r->aucs);
      const double cx = x + kSlot / 2, half = kSlot * 0.3;
      const char* c = colour(r->arm);
      svg += fmt::format("<g class=\"box\" data-size=\"{}\" data-arm=\"{}\" data-n=\"{}\" data-median=\"{}\">\n",
                         size, arm_tag(r->arm), r->aucs.size(), format_double(b.median));
      svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"{3}\"/>\n", cx,
                         y_of(b.max), y_of(b.min), c);
      for (double v : {b.min, b.max}) {
        svg += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\"/>\n",
                           cx - half / 2, y_of(v), cx + half / 2, y_of(v), c);
      }
      svg += fmt::format(
          "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" fill-opacity=\"0.35\" "
          "stroke=\"{}\"/>\n",
          cx - half, y_of(b.q3), 2 * half, y_of(b.q1) - y_of(b.q3), c, c);
      svg += fmt::format(
          "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" stroke-width=\"2.5\"/>\n",
          cx - half, y_of(b.median), cx + half, y_of(b.median), c);
      svg += "</g>\n";
      x += kSlot;
    }
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", (group_start + x) / 2,
                       kPlotTop + kPlotHeight + 20, size);
    x += kGroupGap;
  }
  svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">subjects per class</text>\n",
                     (kLeft + width) / 2, kPlotTop + kPlotHeight + 42);

  // Legend.
  double lx = kLeft + 10;
  for (Arm arm : {Arm::kPretrained, Arm::kScratch}) {
    svg += fmt::format(
        "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"12\" height=\"12\" fill=\"{}\" fill-opacity=\"0.35\" stroke=\"{}\"/>"
        "<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n",
        lx, height - 20, colour(arm), colour(arm), lx + 16, height - 10, arm_tag(arm));
    lx += 60;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace tdir::cli
