#include "tdir/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "tdir/io.hpp"
#include "tdir/rng.hpp"

namespace tdir {

namespace fs = std::filesystem;

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [label](const SubjectRecord& r) { return r.label == label; }));
}

void Dataset::validate() const {
  if (records.empty()) return;
  const std::size_t comps = records.front().components();
  for (const auto& r : records) {
    if (r.matrix.rank() != 2) {
      throw DataError(DataError::Kind::kInconsistentComponents,
                      "subject " + r.subject_id + ": matrix must be components x timepoints");
    }
    if (r.components() != comps) {
      throw DataError(DataError::Kind::kInconsistentComponents,
                      "subject " + r.subject_id + " has " + std::to_string(r.components()) +
                          " components, expected " + std::to_string(comps));
    }
    if (r.label < 0 || static_cast<std::size_t>(r.label) >= class_names.size()) {
      throw DataError(DataError::Kind::kBadLabel,
                      "subject " + r.subject_id + " has label " + std::to_string(r.label) +
                          " but only " + std::to_string(class_names.size()) + " classes");
    }
    for (std::size_t c = 0; c < r.components(); ++c) {
      for (float v : r.matrix.row(c)) {
        if (!std::isfinite(v)) {
          throw DataError(DataError::Kind::kNonFinite,
                          "subject " + r.subject_id + " row " + std::to_string(c) +
                              " contains a non-finite value");
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------

WindowedSample slice_windows(const SubjectRecord& record, std::size_t window_len) {
  if (window_len == 0) throw DataError(DataError::Kind::kTooShort, "window length must be positive");
  const std::size_t comps = record.components();
  const std::size_t tp = record.timepoints();
  if (tp < window_len) {
    throw DataError(DataError::Kind::kTooShort,
                    "subject " + record.subject_id + " has " + std::to_string(tp) +
                        " timepoints, fewer than window length " + std::to_string(window_len));
  }
  const std::size_t count = tp / window_len;
  if (tp % window_len != 0) {
    spdlog::warn("subject {}: dropping {} trailing timepoints ({} windows of {})", record.subject_id,
                 tp % window_len, count, window_len);
  }
  WindowedSample out;
  out.subject_id = record.subject_id;
  out.label = record.label;
  out.windows.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    Tensor<float> win({comps, window_len});
    for (std::size_t c = 0; c < comps; ++c) {
      const float* src = record.matrix.values.data() + c * tp + w * window_len;
      std::copy(src, src + window_len, win.values.begin() + static_cast<std::ptrdiff_t>(c * window_len));
    }
    out.windows.push_back(std::move(win));
  }
  return out;
}

SubjectRecord reverse_time(const SubjectRecord& record) {
  SubjectRecord out = record;
  out.subject_id += "-rev";
  const std::size_t tp = record.timepoints();
  for (std::size_t c = 0; c < record.components(); ++c) {
    auto first = out.matrix.values.begin() + static_cast<std::ptrdiff_t>(c * tp);
    std::reverse(first, first + static_cast<std::ptrdiff_t>(tp));
  }
  return out;
}

std::vector<PretextSample> make_pretext_dataset(const Dataset& dataset, std::size_t window_len) {
  std::vector<PretextSample> out;
  out.reserve(2 * dataset.size());
  for (const auto& r : dataset.records) {
    out.push_back({slice_windows(r, window_len), Direction::kForward});
    out.push_back({slice_windows(reverse_time(r), window_len), Direction::kReversed});
  }
  return out;
}

SubjectRecord zscore_normalize(const SubjectRecord& record) {
  SubjectRecord out = record;
  const std::size_t tp = record.timepoints();
  for (std::size_t c = 0; c < record.components(); ++c) {
    float* row = out.matrix.values.data() + c * tp;
    double mean = 0.0;
    for (std::size_t t = 0; t < tp; ++t) mean += row[t];
    mean /= static_cast<double>(tp);
    double var = 0.0;
    for (std::size_t t = 0; t < tp; ++t) var += (row[t] - mean) * (row[t] - mean);
    var /= static_cast<double>(tp);
    const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
    for (std::size_t t = 0; t < tp; ++t) row[t] = static_cast<float>((row[t] - mean) / sd);
  }
  return out;
}

Dataset zscore_normalize(const Dataset& dataset) {
  Dataset out;
  out.class_names = dataset.class_names;
  out.provenance = dataset.provenance;
  out.records.reserve(dataset.size());
  for (const auto& r : dataset.records) out.records.push_back(zscore_normalize(r));
  return out;
}

std::vector<WindowedSample> window_dataset(const Dataset& dataset, std::size_t window_len) {
  std::vector<WindowedSample> out;
  out.reserve(dataset.size());
  for (const auto& r : dataset.records) out.push_back(slice_windows(r, window_len));
  return out;
}

std::vector<WindowedSample> direction_targets(const std::vector<PretextSample>& pretext) {
  std::vector<WindowedSample> out;
  out.reserve(pretext.size());
  for (const auto& p : pretext) {
    out.push_back(p.sample);
    out.back().label = static_cast<int>(p.direction);
  }
  return out;
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw DataError(DataError::Kind::kInvalidConfig, msg); };
  if (components == 0 || timepoints == 0) fail("components and timepoints must be positive");
  if (subjects_per_class == 0) fail("subjects_per_class must be at least 1");
  if (n_classes == 0) fail("n_classes must be at least 1");
  if (ar_coefficients.empty()) fail("at least one set of AR coefficients is required");
  if (ar_coefficients.size() != 1 && ar_coefficients.size() != n_classes) {
    fail("need one AR coefficient pair per class (or a single shared pair)");
  }
  for (const auto& a : ar_coefficients) {
    if (!(std::abs(a.lag1) + std::abs(a.lag2) < 1.0)) {
      fail("unstable AR coefficients (" + std::to_string(a.lag1) + ", " + std::to_string(a.lag2) +
           "): |a1| + |a2| must be below 1");
    }
  }
  if (!(asymmetry_strength >= 0.0)) fail("asymmetry_strength must be non-negative");
  if (!(noise_scale > 0.0)) fail("noise_scale must be positive");
  if (!(subject_jitter >= 0.0)) fail("subject_jitter must be non-negative");
  if (mixing_neighbors >= components && components > 1) {
    fail("mixing_neighbors must be smaller than the component count");
  }
}

const ArCoefficients& SynthConfig::coefficients_for(std::size_t cls) const {
  return ar_coefficients.size() == 1 ? ar_coefficients.front() : ar_coefficients.at(cls);
}

Dataset synth_generate(const SynthConfig& config) {
  config.validate();
  const std::size_t comps = config.components;
  const std::size_t tp = config.timepoints;

  // Shared sparse mixing: component c receives weight w from each neighbour.
  struct Link {
    std::size_t from;
    double weight;
  };
  std::vector<std::vector<Link>> mixing(comps);
  {
    Rng rng(derive_seed(config.mixing_seed, {hash_name("mixing")}));
    for (std::size_t c = 0; c < comps && comps > 1; ++c) {
      std::set<std::size_t> used;
      while (used.size() < config.mixing_neighbors) {
        const std::size_t j = rng.below(comps);
        if (j == c || used.count(j)) continue;
        used.insert(j);
        mixing[c].push_back({j, rng.uniform(-config.mixing_weight, config.mixing_weight)});
      }
    }
  }

  Dataset ds;
  ds.provenance = "synthetic: seed=" + std::to_string(config.seed) +
                  " mixing_seed=" + std::to_string(config.mixing_seed) +
                  " asymmetry=" + std::to_string(config.asymmetry_strength) +
                  (config.gaussian_only   ? " gaussian-only"
                   : config.shared_shocks ? " shared-shocks"
                                          : " independent-shocks");
  for (std::size_t k = 0; k < config.n_classes; ++k) ds.class_names.push_back("class" + std::to_string(k));

  std::vector<double> raw(comps * tp);
  for (std::size_t cls = 0; cls < config.n_classes; ++cls) {
    const ArCoefficients base = config.coefficients_for(cls);
    for (std::size_t s = 0; s < config.subjects_per_class; ++s) {
      Rng rng(derive_seed(config.seed, {hash_name("subject"), cls, s}));
      ArCoefficients a = base;
      if (config.subject_jitter > 0.0) {
        const double limit = 0.98 - std::abs(a.lag2);
        a.lag1 = std::clamp(a.lag1 + config.subject_jitter * rng.normal(), -limit, limit);
      }
      const std::size_t steps = config.burn_in + tp;
      std::vector<double> shocks;
      if (!config.gaussian_only && config.shared_shocks) {
        shocks.resize(steps);
        for (auto& e : shocks) e = rng.exponential();
      }
      for (std::size_t c = 0; c < comps; ++c) {
        double x1 = 0.0, x2 = 0.0;
        for (std::size_t t = 0; t < steps; ++t) {
          double x;
          if (config.gaussian_only) {
            x = a.lag1 * x1 + a.lag2 * x2 + config.noise_scale * rng.normal();
          } else {
            const double e = shocks.empty() ? rng.exponential() : shocks[t];
            const double skew = config.asymmetry_strength * (e - 1.0);
            x = a.lag1 * x1 + a.lag2 * std::tanh(x2) + skew + config.noise_scale * rng.normal();
          }
          x2 = x1;
          x1 = x;
          if (t >= config.burn_in) raw[c * tp + (t - config.burn_in)] = x;
        }
      }
      SubjectRecord rec;
      char id[64];
      std::snprintf(id, sizeof id, "sub-c%zu-%04zu", cls, s);
      rec.subject_id = id;
      rec.label = static_cast<int>(cls);
      rec.matrix = Tensor<float>({comps, tp});
      for (std::size_t c = 0; c < comps; ++c) {
        for (std::size_t t = 0; t < tp; ++t) {
          double v = raw[c * tp + t];
          for (const auto& link : mixing[c]) v += link.weight * raw[link.from * tp + t];
          rec.matrix.values[c * tp + t] = static_cast<float>(v);
        }
      }
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------

namespace {

std::map<int, std::vector<std::size_t>> indices_by_label(const Dataset& ds) {
  std::map<int, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < ds.size(); ++i) out[ds.records[i].label].push_back(i);
  return out;
}

// Splits `total` across groups proportionally to `weights` by largest
// remainder; ties go to the lower group index.
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<std::size_t>& weights) {
  const std::size_t sum = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  std::vector<std::size_t> out(weights.size(), 0);
  if (sum == 0) return out;
  std::vector<std::pair<std::size_t, std::size_t>> rema;  // (remainder numerator, index)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::size_t num = total * weights[i];
    out[i] = num / sum;
    assigned += out[i];
    rema.emplace_back(num % sum, i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) out[rema[k].second] += 1;
  return out;
}

Dataset empty_like(const Dataset& ds) {
  Dataset out;
  out.class_names = ds.class_names;
  out.provenance = ds.provenance;
  return out;
}

}  // namespace

Dataset select_records(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Dataset out = empty_like(dataset);
  out.records.reserve(indices.size());
  for (std::size_t i : indices) out.records.push_back(dataset.records.at(i));
  return out;
}

DatasetSplit stratified_split(const Dataset& dataset, const SplitSpec& spec) {
  const std::size_t n = dataset.size();
  if (spec.val_size + spec.test_size >= n && spec.val_size + spec.test_size > 0) {
    throw DataError(DataError::Kind::kInfeasible,
                    "split sizes val=" + std::to_string(spec.val_size) + " test=" +
                        std::to_string(spec.test_size) + " leave no training records out of " +
                        std::to_string(n));
  }
  Rng rng(derive_seed(spec.seed, {hash_name("split")}));
  std::vector<int> assignment(n, 0);  // 0 train, 1 val, 2 test

  if (spec.stratified) {
    const auto groups = indices_by_label(dataset);
    std::vector<std::size_t> weights;
    for (const auto& [label, idx] : groups) weights.push_back(idx.size());
    const auto val_q = largest_remainder(spec.val_size, weights);
    const auto test_q = largest_remainder(spec.test_size, weights);
    std::size_t g = 0;
    for (const auto& [label, idx] : groups) {
      if (val_q[g] + test_q[g] > idx.size()) {
        throw DataError(DataError::Kind::kInfeasible,
                        "class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                            " records, cannot provide " + std::to_string(val_q[g] + test_q[g]) +
                            " for holdouts");
      }
      auto order = idx;
      rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t k = 0; k < val_q[g]; ++k) assignment[order[k]] = 1;
      for (std::size_t k = 0; k < test_q[g]; ++k) assignment[order[val_q[g] + k]] = 2;
      ++g;
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t k = 0; k < spec.val_size; ++k) assignment[order[k]] = 1;
    for (std::size_t k = 0; k < spec.test_size; ++k) assignment[order[spec.val_size + k]] = 2;
  }

  DatasetSplit out{empty_like(dataset), empty_like(dataset), empty_like(dataset)};
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = assignment[i] == 0 ? out.train : assignment[i] == 1 ? out.val : out.test;
    dst.records.push_back(dataset.records[i]);
  }
  return out;
}

Dataset balance_classes(const Dataset& dataset, std::uint64_t seed, std::size_t trial_index) {
  const auto groups = indices_by_label(dataset);
  if (groups.size() != 2) {
    throw DataError(DataError::Kind::kInfeasible,
                    "class balancing needs exactly two classes, found " + std::to_string(groups.size()));
  }
  auto it = groups.begin();
  const auto& a = it->second;
  const auto& b = std::next(it)->second;
  const bool a_minor = a.size() <= b.size();
  const auto& minority = a_minor ? a : b;
  auto majority = a_minor ? b : a;

  Rng rng(derive_seed(seed, {hash_name("balance")}));
  rng.shuffle(std::span<std::size_t>(majority));
  const std::size_t m = minority.size();
  std::vector<bool> keep(dataset.size(), false);
  for (std::size_t i : minority) keep[i] = true;
  const std::size_t start = (trial_index * m) % majority.size();
  for (std::size_t k = 0; k < m; ++k) keep[majority[(start + k) % majority.size()]] = true;

  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (keep[i]) chosen.push_back(i);
  }
  return select_records(dataset, chosen);
}

Dataset subsample_per_class(const Dataset& dataset, std::size_t n_per_class, std::uint64_t seed) {
  const auto groups = indices_by_label(dataset);
  std::vector<std::size_t> chosen;
  for (const auto& [label, idx] : groups) {
    if (idx.size() < n_per_class) {
      throw DataError(DataError::Kind::kInfeasible,
                      "class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                          " records, fewer than the " + std::to_string(n_per_class) + " requested");
    }
    auto order = idx;
    Rng rng(derive_seed(seed, {hash_name("subsample"), static_cast<std::uint64_t>(label)}));
    rng.shuffle(std::span<std::size_t>(order));
    chosen.insert(chosen.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_per_class));
  }
  return select_records(dataset, chosen);
}

// ---------------------------------------------------------------------------

std::string format_float(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

Tensor<float> parse_matrix(const std::string& text, const std::string& subject) {
  std::vector<float> values;
  std::size_t cols = 0;
  const auto lines = lines_of(text);
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const auto cells = split(trim(lines[r]), ',');
    if (r == 0) {
      cols = cells.size();
    } else if (cells.size() != cols) {
      throw DataError(DataError::Kind::kRaggedRows,
                      "subject " + subject + " row " + std::to_string(r) + " has " +
                          std::to_string(cells.size()) + " columns, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto cell = trim(cells[c]);
      if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
      float v = 0.0f;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        throw DataError(DataError::Kind::kNonNumeric,
                        "subject " + subject + " row " + std::to_string(r) + " column " +
                            std::to_string(c) + ": non-numeric cell '" + std::string(cell) + "'");
      }
      if (!std::isfinite(v)) {
        throw DataError(DataError::Kind::kNonFinite,
                        "subject " + subject + " row " + std::to_string(r) + " column " +
                            std::to_string(c) + ": non-finite value '" + std::string(cell) + "'");
      }
      values.push_back(v);
    }
  }
  if (lines.empty() || cols == 0) {
    throw DataError(DataError::Kind::kRaggedRows, "subject " + subject + ": empty matrix");
  }
  return Tensor<float>({lines.size(), cols}, std::move(values));
}

}  // namespace

Dataset load_dataset(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) {
    throw DataError(DataError::Kind::kMissingFile, "manifest not found: " + manifest_path.string());
  }
  const fs::path dir = manifest_path.parent_path();
  Dataset ds;
  ds.provenance = "loaded from " + manifest_path.string();

  const fs::path classes_path = dir / kClassesName;
  if (!fs::exists(classes_path)) {
    throw DataError(DataError::Kind::kMissingFile, "class list not found: " + classes_path.string());
  }
  for (auto line : lines_of(read_file(classes_path))) ds.class_names.emplace_back(trim(line));

  const std::string manifest = read_file(manifest_path);
  const auto lines = lines_of(manifest);
  if (lines.empty() || trim(lines[0]) != "subject_id\tlabel\tpath") {
    throw DataError(DataError::Kind::kMalformedManifest,
                    "manifest header must be 'subject_id<TAB>label<TAB>path'");
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(trim(lines[i]), '\t');
    if (fields.size() != 3) {
      throw DataError(DataError::Kind::kMalformedManifest,
                      "manifest line " + std::to_string(i + 1) + " needs 3 tab-separated fields");
    }
    SubjectRecord rec;
    rec.subject_id = std::string(fields[0]);
    int label = -1;
    auto res = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), label);
    if (res.ec != std::errc() || res.ptr != fields[1].data() + fields[1].size() || label < 0) {
      throw DataError(DataError::Kind::kBadLabel,
                      "subject " + rec.subject_id + ": label must be a non-negative integer");
    }
    rec.label = label;
    const fs::path matrix_path = dir / std::string(fields[2]);
    if (!fs::exists(matrix_path)) {
      throw DataError(DataError::Kind::kMissingFile,
                      "subject " + rec.subject_id + ": matrix file not found: " + matrix_path.string());
    }
    rec.matrix = parse_matrix(read_file(matrix_path), rec.subject_id);
    ds.records.push_back(std::move(rec));
  }
  ds.validate();
  return ds;
}

fs::path save_dataset(const Dataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir / "subjects");
  std::string manifest = "subject_id\tlabel\tpath\n";
  for (const auto& r : dataset.records) {
    const std::string rel = "subjects/" + r.subject_id + ".csv";
    manifest += r.subject_id + "\t" + std::to_string(r.label) + "\t" + rel + "\n";
    std::string csv;
    csv.reserve(r.matrix.size() * 12);
    for (std::size_t c = 0; c < r.components(); ++c) {
      const auto row = r.matrix.row(c);
      for (std::size_t t = 0; t < row.size(); ++t) {
        if (t) csv += ',';
        csv += format_float(row[t]);
      }
      csv += '\n';
    }
    write_file_atomic(dir / rel, csv);
  }
  std::string classes;
  for (const auto& name : dataset.class_names) classes += name + "\n";
  write_file_atomic(dir / kClassesName, classes);
  write_file_atomic(dir / kManifestName, manifest);
  return dir / kManifestName;
}

}  // namespace tdir
