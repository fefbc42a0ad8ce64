#include "tdir/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace tdir {

std::size_t ScoredSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t ScoredSet::negatives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 0));
}

namespace {

void check_scored(const ScoredSet& s) {
  if (s.scores.size() != s.labels.size()) throw EvalError("scores and labels differ in length");
  for (int l : s.labels) {
    if (l != 0 && l != 1) throw EvalError("labels must be 0 or 1");
  }
  for (double v : s.scores) {
    if (!std::isfinite(v)) throw EvalError("scores must be finite");
  }
  if (s.positives() == 0 || s.negatives() == 0) {
    throw EvalError("AUC is undefined unless both classes are present");
  }
}

}  // namespace

std::vector<RocPoint> roc_curve(const ScoredSet& s) {
  check_scored(s);
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  const double pos = static_cast<double>(s.positives());
  const double neg = static_cast<double>(s.negatives());

  std::vector<RocPoint> curve;
  curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double thr = s.scores[order[i]];
    while (i < order.size() && s.scores[order[i]] == thr) {
      (s.labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    curve.push_back({thr, tp / pos, fp / neg});
  }
  curve.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

double auc(const ScoredSet& s) {
  check_scored(s);
  const std::size_t n = s.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  // Sum of 1-based average ranks of the positives.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (s.labels[order[k]] == 1) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(s.positives());
  const double nn = static_cast<double>(s.negatives());
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double auc_bruteforce_oracle(const ScoredSet& s) {
  check_scored(s);
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (s.labels[i] != 1) continue;
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
      if (s.labels[j] != 0) continue;
      ++pairs;
      if (s.scores[i] > s.scores[j]) wins += 1.0;
      else if (s.scores[i] == s.scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------

std::string arm_tag(Arm arm) { return arm == Arm::kPretrained ? "PTR" : "NPT"; }

Arm parse_arm(const std::string& tag) {
  if (tag == "PTR") return Arm::kPretrained;
  if (tag == "NPT") return Arm::kScratch;
  throw std::invalid_argument("unknown arm tag '" + tag + "' (expected PTR or NPT)");
}

double mean_of(std::span<const double> v) {
  if (v.empty()) throw EvalError("mean of an empty list");
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

double median_of(std::span<const double> v) {
  if (v.empty()) throw EvalError("median of an empty list");
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  return n % 2 ? sorted[n / 2] : (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
}

EvalReport summarize(std::vector<double> aucs, const std::string& dataset, Arm arm,
                     std::size_t subjects_per_class, std::vector<std::size_t> repeats) {
  if (aucs.empty()) throw EvalError("cannot summarize an empty AUC list");
  if (repeats.empty()) {
    repeats.resize(aucs.size());
    std::iota(repeats.begin(), repeats.end(), std::size_t{0});
  }
  if (repeats.size() != aucs.size()) throw EvalError("run identifiers and AUCs differ in length");
  EvalReport r;
  r.dataset = dataset;
  r.arm = arm;
  r.subjects_per_class = subjects_per_class;
  r.mean = mean_of(aucs);
  r.median = median_of(aucs);
  r.aucs = std::move(aucs);
  r.repeats = std::move(repeats);
  return r;
}

ComparisonRow compare_arms(const EvalReport& ptr, const EvalReport& npt) {
  if (ptr.dataset != npt.dataset || ptr.subjects_per_class != npt.subjects_per_class) {
    throw EvalError("cannot compare reports for different datasets or training sizes");
  }
  if (ptr.arm != Arm::kPretrained || npt.arm != Arm::kScratch) throw EvalError("compare_arms expects (PTR, NPT)");
  ComparisonRow row;
  row.dataset = ptr.dataset;
  row.subjects_per_class = ptr.subjects_per_class;
  row.ptr_mean = ptr.mean;
  row.ptr_median = ptr.median;
  row.npt_mean = npt.mean;
  row.npt_median = npt.median;
  row.median_delta = ptr.median - npt.median;
  std::map<std::size_t, double> npt_by_repeat;
  for (std::size_t i = 0; i < npt.aucs.size(); ++i) npt_by_repeat[npt.repeats[i]] = npt.aucs[i];
  for (std::size_t i = 0; i < ptr.aucs.size(); ++i) {
    auto it = npt_by_repeat.find(ptr.repeats[i]);
    if (it != npt_by_repeat.end()) row.paired_deltas.push_back(ptr.aucs[i] - it->second);
  }
  return row;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_runs_csv(std::span<const RunRow> rows) {
  std::string out = std::string(kRunsHeader) + "\n";
  for (const auto& r : rows) {
    out += r.dataset + "," + arm_tag(r.arm) + "," + std::to_string(r.subjects_per_class) + "," +
           std::to_string(r.repeat) + "," + format_double(r.test_auc) + "\n";
  }
  return out;
}

namespace {

template <typename N>
N parse_number(const std::string& s, std::size_t line) {
  N v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("runs CSV line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<RunRow> parse_runs_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("runs CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kRunsHeader) throw std::invalid_argument("runs CSV header must be '" + std::string(kRunsHeader) + "'");
  std::vector<RunRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw std::invalid_argument("runs CSV line " + std::to_string(lineno) + ": expected 5 fields");
    }
    RunRow r;
    r.dataset = cells[0];
    r.arm = parse_arm(cells[1]);
    r.subjects_per_class = parse_number<std::size_t>(cells[2], lineno);
    r.repeat = parse_number<std::size_t>(cells[3], lineno);
    r.test_auc = parse_number<double>(cells[4], lineno);
    if (!(r.test_auc >= 0.0 && r.test_auc <= 1.0)) {
      throw std::invalid_argument("runs CSV line " + std::to_string(lineno) + ": AUC outside [0, 1]");
    }
    rows.push_back(r);
  }
  return rows;
}

std::vector<EvalReport> group_runs(std::span<const RunRow> rows) {
  // Key order: dataset, size, then PTR before NPT.
  std::map<std::tuple<std::string, std::size_t, int>, std::vector<const RunRow*>> groups;
  for (const auto& r : rows) {
    groups[{r.dataset, r.subjects_per_class, r.arm == Arm::kPretrained ? 0 : 1}].push_back(&r);
  }
  std::vector<EvalReport> out;
  for (const auto& [key, members] : groups) {
    std::vector<double> aucs;
    std::vector<std::size_t> repeats;
    for (const auto* r : members) {
      aucs.push_back(r->test_auc);
      repeats.push_back(r->repeat);
    }
    out.push_back(summarize(std::move(aucs), std::get<0>(key), members.front()->arm,
                            std::get<1>(key), std::move(repeats)));
  }
  return out;
}

std::string format_summary_csv(std::span<const EvalReport> reports) {
  std::string out = std::string(kSummaryHeader) + "\n";
  for (const auto& r : reports) {
    out += r.dataset + "," + arm_tag(r.arm) + "," + std::to_string(r.subjects_per_class) + "," +
           format_double(r.mean) + "," + format_double(r.median) + "," + std::to_string(r.aucs.size()) +
           "\n";
  }
  return out;
}

}  // namespace tdir
