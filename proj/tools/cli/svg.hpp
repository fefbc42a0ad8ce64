#pragma once

#include <span>
#include <string>
#include <vector>

#include "tdir/eval.hpp"

namespace tdir::cli {

struct BoxStats {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Quartiles by linear interpolation between order statistics; the median is
/// median_of() so it matches the summary file exactly.
BoxStats box_stats(std::span<const double> values);

/// Self-contained SVG with one box per report, grouped by subjects per class.
/// Each box is a <g class="box"> carrying data-size, data-arm, data-n and
/// data-median attributes.
std::string auc_box_plot(const std::string& dataset, std::span<const EvalReport> reports);

}  // namespace tdir::cli
