#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tdir/tensor.hpp"

namespace tdir {

/// One subject: a components × timepoints matrix of ICA time courses.
struct SubjectRecord {
  std::string subject_id;
  int label = 0;
  Tensor<float> matrix;

  std::size_t components() const { return matrix.dims.at(0); }
  std::size_t timepoints() const { return matrix.dims.at(1); }
};

struct Dataset {
  std::vector<SubjectRecord> records;
  std::vector<std::string> class_names;
  std::string provenance;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t count_label(int label) const;
  /// Throws DataError when records disagree on component count, carry
  /// out-of-range labels or non-finite values.
  void validate() const;
};

/// Contiguous, non-overlapping windows in temporal order.
struct WindowedSample {
  std::vector<Tensor<float>> windows;
  std::string subject_id;
  int label = 0;
};

enum class Direction : int { kForward = 0, kReversed = 1 };

struct PretextSample {
  WindowedSample sample;
  Direction direction = Direction::kForward;
};

class DataError : public std::runtime_error {
 public:
  enum class Kind {
    kMissingFile,
    kMalformedManifest,
    kRaggedRows,
    kNonNumeric,
    kNonFinite,
    kInconsistentComponents,
    kBadLabel,
    kTooShort,
    kInfeasible,
    kInvalidConfig,
  };
  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// ---------------------------------------------------------------------------
// Windowing and the time-direction pretext task

WindowedSample slice_windows(const SubjectRecord& record, std::size_t window_len);

/// Reverses every component's time series; the id gains a "-rev" suffix.
SubjectRecord reverse_time(const SubjectRecord& record);

/// Emits, per record, the forward windows (direction 0) followed by the
/// windows of the fully reversed series (direction 1). Reversal happens
/// before windowing, so window order is reversed as well.
std::vector<PretextSample> make_pretext_dataset(const Dataset& dataset, std::size_t window_len);

/// Per-component z-score over time. Constant components map to zeros.
SubjectRecord zscore_normalize(const SubjectRecord& record);
Dataset zscore_normalize(const Dataset& dataset);

/// Windows every record; its label becomes the sample label.
std::vector<WindowedSample> window_dataset(const Dataset& dataset, std::size_t window_len);
/// Pretext samples relabelled with their direction as the training target.
std::vector<WindowedSample> direction_targets(const std::vector<PretextSample>& pretext);

// ---------------------------------------------------------------------------
// Synthetic time-irreversible ICA-like data

struct ArCoefficients {
  double lag1 = 0.5;
  double lag2 = 0.2;
};

struct SynthConfig {
  std::size_t components = 53;
  std::size_t timepoints = 140;
  std::size_t subjects_per_class = 100;
  std::size_t n_classes = 2;
  /// One entry per class; a single entry is shared by every class.
  std::vector<ArCoefficients> ar_coefficients = {{0.5, 0.2}, {0.3, 0.2}};
  double asymmetry_strength = 1.5;
  double noise_scale = 1.0;
  /// Gaussian innovations and a linear second lag: a time-reversible process.
  bool gaussian_only = false;
  /// One skewed shock sequence per subject, driving every component (the
  /// Gaussian term stays per component). When false each component draws
  /// its own shocks.
  bool shared_shocks = true;
  /// Each component mixes in this many other components.
  std::size_t mixing_neighbors = 2;
  double mixing_weight = 0.3;
  /// Seeds the mixing on its own, so datasets drawn with different `seed`s
  /// share one spatial structure unless this is changed too.
  std::uint64_t mixing_seed = 0;
  /// Standard deviation of per-subject jitter added to the first lag.
  double subject_jitter = 0.0;
  std::size_t burn_in = 50;
  std::uint64_t seed = 0;

  void validate() const;
  const ArCoefficients& coefficients_for(std::size_t cls) const;
};

/// x_t = a1·x_{t−1} + a2·tanh(x_{t−2}) + s·(e_t − 1) + σ·n_t with e ~ Exp(1),
/// n ~ N(0,1), followed by a sparse cross-component mixing shared by all
/// subjects. Deterministic in the config (including seed).
///
/// With independent shocks per component the direction cue is spread over
/// 53 unrelated skewed series, and a first convolution that mixes channels
/// with random signs averages it away; shared shocks keep it visible.
Dataset synth_generate(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Splits and subsets

struct SplitSpec {
  std::size_t val_size = 0;
  std::size_t test_size = 0;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

DatasetSplit stratified_split(const Dataset& dataset, const SplitSpec& spec);

/// Keeps every minority record and a minority-sized block of the
/// seed-shuffled majority list starting at trial_index·minority_size
/// (wrapping), so consecutive trials sweep the whole majority class.
Dataset balance_classes(const Dataset& dataset, std::uint64_t seed, std::size_t trial_index);

/// Exactly n records per class, drawn without replacement. For a fixed seed
/// a smaller n yields a subset of a larger n.
Dataset subsample_per_class(const Dataset& dataset, std::size_t n_per_class, std::uint64_t seed);

/// Records at the given indices, in the order given.
Dataset select_records(const Dataset& dataset, const std::vector<std::size_t>& indices);

// ---------------------------------------------------------------------------
// On-disk format: manifest.tsv + classes.txt + one CSV matrix per subject.

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kClassesName = "classes.txt";

Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Writes `dataset` into `dir` and returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Formats a float with the shortest representation that parses back to the
/// same value.
std::string format_float(float v);

}  // namespace tdir
