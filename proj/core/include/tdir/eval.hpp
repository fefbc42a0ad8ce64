#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdir {

/// Positive-class scores with 0/1 labels.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t positives() const;
  std::size_t negatives() const;
};

/// Raised when a metric is undefined for the given input (e.g. one class).
class EvalError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct RocPoint {
  double threshold;
  double tpr;
  double fpr;
};

/// Points at each distinct score (descending) plus the (0,0) and (1,1)
/// sentinels, whose thresholds are +inf and -inf.
std::vector<RocPoint> roc_curve(const ScoredSet& s);
double trapezoid_area(std::span<const RocPoint> curve);

/// Mann–Whitney rank statistic with average ranks for ties.
double auc(const ScoredSet& s);
/// O(n²) pair count: 1 per correctly ordered pair, 0.5 per tie. Test oracle.
double auc_bruteforce_oracle(const ScoredSet& s);

enum class Arm { kPretrained, kScratch };
std::string arm_tag(Arm arm);  // "PTR" / "NPT"
Arm parse_arm(const std::string& tag);

struct EvalReport {
  std::string dataset;
  Arm arm = Arm::kScratch;
  std::size_t subjects_per_class = 0;
  std::vector<std::size_t> repeats;  // run identifiers, parallel to aucs
  std::vector<double> aucs;
  double mean = 0.0;
  double median = 0.0;
};

double mean_of(std::span<const double> v);
/// Midpoint of the two central values for even counts.
double median_of(std::span<const double> v);

EvalReport summarize(std::vector<double> aucs, const std::string& dataset, Arm arm,
                     std::size_t subjects_per_class, std::vector<std::size_t> repeats = {});

struct ComparisonRow {
  std::string dataset;
  std::size_t subjects_per_class = 0;
  double ptr_mean = 0.0, ptr_median = 0.0;
  double npt_mean = 0.0, npt_median = 0.0;
  double median_delta = 0.0;  // PTR − NPT
  std::vector<double> paired_deltas;
};

/// Pairs runs by repeat index; the pair count is the smaller run count.
ComparisonRow compare_arms(const EvalReport& ptr, const EvalReport& npt);

// ---------------------------------------------------------------------------
// Result files

struct RunRow {
  std::string dataset;
  Arm arm = Arm::kScratch;
  std::size_t subjects_per_class = 0;
  std::size_t repeat = 0;
  double test_auc = 0.0;
};

inline constexpr const char* kRunsHeader = "dataset,arm,subjects_per_class,repeat,test_auc";
inline constexpr const char* kSummaryHeader =
    "dataset,arm,subjects_per_class,mean_auc,median_auc,n_runs";

std::string format_runs_csv(std::span<const RunRow> rows);
std::vector<RunRow> parse_runs_csv(const std::string& text);
/// One report per (dataset, size, arm), in ascending order of those keys.
std::vector<EvalReport> group_runs(std::span<const RunRow> rows);
std::string format_summary_csv(std::span<const EvalReport> reports);
/// Doubles printed with the shortest representation that round-trips.
std::string format_double(double v);

}  // namespace tdir
