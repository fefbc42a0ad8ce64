#include "cli.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "manifest.hpp"
#include "svg.hpp"
#include "tdir/checkpoint.hpp"
#include "tdir/data.hpp"
#include "tdir/eval.hpp"
#include "tdir/gradcheck.hpp"
#include "tdir/io.hpp"
#include "tdir/rng.hpp"
#include "tdir/train.hpp"

#ifndef TDIR_VERSION
#define TDIR_VERSION "unknown"
#endif

namespace tdir::cli {

namespace fs = std::filesystem;

namespace {

/// Bad flags or inputs; maps to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Ran to completion but a check failed; maps to exit code 2.
class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_text(const std::string& v) { return v; }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(double v) { return format_double(v); }
std::string to_text(std::size_t v) { return std::to_string(v); }
std::string to_text(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

// Registers options on a subcommand and remembers how to print each bound
// variable, so the manifest records resolved values rather than raw argv.
class FlagSet {
 public:
  explicit FlagSet(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    entries_.emplace_back(name, [&var] { return to_text(var); });
    return app_->add_option("--" + name, var, help)->capture_default_str();
  }
  CLI::Option* list(const std::string& name, std::vector<std::string>& var, const std::string& help) {
    entries_.emplace_back(name, [&var] { return to_text(var); });
    return app_->add_option("--" + name, var, help)->delimiter(',')->capture_default_str();
  }
  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    entries_.emplace_back(name, [&var] { return to_text(var); });
    return app_->add_flag("--" + name, var, help);
  }

  std::map<std::string, std::string> resolved() const {
    std::map<std::string, std::string> out;
    for (const auto& [name, get] : entries_) out[name] = get();
    return out;
  }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> entries_;
};

struct Shared {
  std::string data;
  std::string out;
  std::size_t seed = 0;
  std::size_t window_len = 20;
  std::size_t epochs = 100;
  double lr = 2e-4;
  std::size_t batch = 32;
  std::size_t patience = 10;
  std::size_t jobs = 1;
  std::size_t val_size = 0;
  std::size_t test_size = 0;
  bool no_zscore = false;
};

void add_shared(FlagSet& f, Shared& s) {
  f.add("data", s.data, "Dataset directory (manifest.tsv, classes.txt, matrices)")->required();
  f.add("out", s.out, "Output directory")->required();
  f.add("seed", s.seed, "Base seed");
  f.add("window-len", s.window_len, "Timepoints per window");
  f.add("epochs", s.epochs, "Maximum training epochs");
  f.add("lr", s.lr, "Adam learning rate");
  f.add("batch", s.batch, "Mini-batch size");
  f.add("patience", s.patience, "Epochs without a validation AUC gain before stopping");
  f.add("jobs", s.jobs, "Worker threads (results do not depend on it)");
  f.add("val-size", s.val_size, "Validation holdout subjects (0: 15% of the dataset)");
  f.add("test-size", s.test_size, "Test holdout subjects (0: 15% of the dataset)");
  f.flag("no-zscore", s.no_zscore, "Skip per-component z-scoring");
}

TrainConfig train_config(const Shared& s) {
  TrainConfig c;
  c.learning_rate = s.lr;
  c.batch_size = s.batch;
  c.max_epochs = s.epochs;
  c.patience = s.patience;
  c.seed = s.seed;
  c.jobs = std::max<std::size_t>(1, s.jobs);
  c.zscore = !s.no_zscore;
  c.validate();
  return c;
}

ModelConfig model_config(const Dataset& ds, const Shared& s) {
  ModelConfig m;
  m.components = ds.records.front().components();
  m.window_len = s.window_len;
  m.n_classes = std::max<std::size_t>(2, ds.class_names.size());
  m.validate();
  return m;
}

SplitSpec split_spec(const Dataset& ds, const Shared& s) {
  const auto n = static_cast<double>(ds.size());
  const std::size_t auto_size = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(0.15 * n)));
  return {s.val_size ? s.val_size : auto_size, s.test_size ? s.test_size : auto_size, s.seed, true};
}

Dataset load_input(const Shared& s) {
  const fs::path dir(s.data);
  Dataset ds = load_dataset(dir / kManifestName);
  if (ds.empty()) throw ValidationError("dataset " + s.data + " has no subjects");
  spdlog::info("loaded {} subjects, {} classes, {}x{} from {}", ds.size(), ds.class_names.size(),
               ds.records.front().components(), ds.records.front().timepoints(), s.data);
  return ds;
}

void prepare_out(const Shared& s) {
  const fs::path out(s.out);
  if (!s.data.empty() && fs::exists(s.data) && fs::exists(out) && fs::equivalent(out, fs::path(s.data))) {
    throw ValidationError("--out must differ from --data; inputs are never modified");
  }
  fs::create_directories(out);
}

std::string dataset_tag(const std::string& tag, const std::string& data) {
  if (!tag.empty()) return tag;
  fs::path p = fs::path(data).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::string history_csv(const std::vector<FoldResult>& folds, bool with_fold) {
  std::string out = with_fold ? "fold,epoch,train_loss,val_auc\n" : "epoch,train_loss,val_auc\n";
  for (const auto& f : folds) {
    for (const auto& h : f.history) {
      if (with_fold) out += std::to_string(f.fold) + ",";
      out += std::to_string(h.epoch) + "," + format_double(h.train_loss) + "," + format_double(h.val_auc) + "\n";
    }
  }
  return out;
}

void log_epoch(const EpochRecord& r) {
  spdlog::info("epoch {:3d} train_loss {:.5f} val_auc {:.4f}", r.epoch, r.train_loss, r.val_auc);
}

std::vector<std::string> comparison_lines(std::span<const EvalReport> reports) {
  std::map<std::pair<std::string, std::size_t>, std::pair<const EvalReport*, const EvalReport*>> cells;
  for (const auto& r : reports) {
    auto& cell = cells[{r.dataset, r.subjects_per_class}];
    (r.arm == Arm::kPretrained ? cell.first : cell.second) = &r;
  }
  std::vector<std::string> lines;
  for (const auto& [key, cell] : cells) {
    if (!cell.first || !cell.second) continue;
    const auto row = compare_arms(*cell.first, *cell.second);
    lines.push_back(row.dataset + "," + std::to_string(row.subjects_per_class) + "," + format_double(row.ptr_mean) +
                    "," + format_double(row.ptr_median) + "," + format_double(row.npt_mean) + "," +
                    format_double(row.npt_median) + "," + format_double(row.median_delta) + "," +
                    std::to_string(row.paired_deltas.size()));
  }
  return lines;
}

constexpr const char* kComparisonHeader =
    "dataset,subjects_per_class,ptr_mean_auc,ptr_median_auc,npt_mean_auc,npt_median_auc,median_delta,n_pairs";

std::string comparison_csv(std::span<const EvalReport> reports) {
  std::string out = std::string(kComparisonHeader) + "\n";
  for (const auto& l : comparison_lines(reports)) out += l + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Each returns the manifest it wants written.

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<FlagSet> flags;
  std::function<RunManifest()> body;
};

struct SynthFlags {
  std::string out;
  std::size_t seed = 0;
  std::size_t components = 53, timepoints = 140, subjects_per_class = 100, classes = 2;
  double asymmetry = 1.5, noise = 1.0, jitter = 0.0, mixing_weight = 0.3;
  std::size_t mixing_neighbors = 2, burn_in = 50, mixing_seed = 0;
  std::string ar = "0.5:0.2,0.3:0.2";
  bool gaussian_only = false;
  bool independent_shocks = false;
};

std::vector<ArCoefficients> parse_ar(const std::string& text) {
  std::vector<ArCoefficients> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      std::size_t used1 = 0, used2 = 0;
      const std::string a = item.substr(0, colon), b = item.substr(colon + 1);
      const double a1 = std::stod(a, &used1), a2 = std::stod(b, &used2);
      if (used1 != a.size() || used2 != b.size()) throw std::invalid_argument(item);
      out.push_back({a1, a2});
    } catch (const std::exception&) {
      throw ValidationError("--ar expects lag1:lag2 pairs separated by commas, got '" + item + "'");
    }
  }
  if (out.empty()) throw ValidationError("--ar is empty");
  return out;
}

RunManifest cmd_synth(const SynthFlags& f) {
  SynthConfig c;
  c.components = f.components;
  c.timepoints = f.timepoints;
  c.subjects_per_class = f.subjects_per_class;
  c.n_classes = f.classes;
  c.asymmetry_strength = f.asymmetry;
  c.noise_scale = f.noise;
  c.gaussian_only = f.gaussian_only;
  c.shared_shocks = !f.independent_shocks;
  c.ar_coefficients = parse_ar(f.ar);
  c.subject_jitter = f.jitter;
  c.mixing_neighbors = f.mixing_neighbors;
  c.mixing_weight = f.mixing_weight;
  c.mixing_seed = f.mixing_seed;
  c.burn_in = f.burn_in;
  c.seed = f.seed;
  const Dataset ds = synth_generate(c);
  fs::create_directories(f.out);
  save_dataset(ds, f.out);
  std::cout << "synth: " << ds.size() << " subjects, " << ds.class_names.size() << " classes, " << f.components
            << "x" << f.timepoints << " -> " << f.out << "\n";
  RunManifest m;
  m.seeds["seed"] = f.seed;
  m.outputs = {(fs::path(f.out) / kManifestName).string(), (fs::path(f.out) / kClassesName).string(),
               (fs::path(f.out) / "subjects").string()};
  return m;
}

RunManifest cmd_pretrain(const Shared& s) {
  const Dataset ds = load_input(s);
  prepare_out(s);
  const auto cfg = train_config(s);
  const auto mc = model_config(ds, s);
  const std::size_t windows = ds.records.front().timepoints() / s.window_len;
  spdlog::info("window length {}: {} windows per sample", s.window_len, windows);
  spdlog::info("pretext samples: {} ({} forward, {} reversed)", 2 * ds.size(), ds.size(), ds.size());
  const auto spec = split_spec(ds, s);
  const auto run = pretrain_dataset(ds, spec, cfg, mc, log_epoch);
  spdlog::info("pretext split: train {} / val {} / test {} samples", run.train_samples, run.val_samples,
               run.test_samples);

  const fs::path out(s.out);
  save_checkpoint(run.pretrain.checkpoint, out / "pretrain.ckpt");
  write_file_atomic(out / "history.csv", history_csv({run.pretrain.result}, false));
  const auto& r = run.pretrain.result;
  std::cout << "pretrain: best val AUC " << format_double(r.best_val_auc) << " at epoch " << r.epochs_to_best
            << " of " << r.epochs_run << "; held-out pretext AUC " << format_double(r.test_auc) << "\n";
  RunManifest m;
  m.seeds["seed"] = s.seed;
  m.inputs = {s.data};
  m.outputs = {(out / "pretrain.ckpt").string(), (out / "history.csv").string()};
  return m;
}

struct FinetuneFlags {
  Shared shared;
  std::string init = "scratch";
  std::size_t folds = 5;
  std::string balance = "none";
  std::size_t trial = 0;
  std::size_t subjects_per_class = 0;
  bool keep_head = false;
  std::string tag;
};

const Checkpoint* resolve_init(const std::string& init, std::optional<Checkpoint>& storage) {
  if (init == "scratch") return nullptr;
  if (!fs::exists(init)) throw ValidationError("--init must be 'scratch' or a checkpoint file; not found: " + init);
  storage = load_checkpoint(init);
  return &*storage;
}

RunManifest cmd_finetune(const FinetuneFlags& f) {
  const Shared& s = f.shared;
  Dataset ds = load_input(s);
  prepare_out(s);
  auto cfg = train_config(s);
  cfg.reinit_head = !f.keep_head;
  const auto mc = model_config(ds, s);
  std::optional<Checkpoint> storage;
  const Checkpoint* init = resolve_init(f.init, storage);
  if (init) initial_params(cfg, mc, init);  // rejects a mismatched checkpoint before any training

  if (f.balance == "rotate") {
    ds = balance_classes(ds, s.seed, f.trial);
    spdlog::info("balanced (trial {}): {} subjects", f.trial, ds.size());
  } else if (f.balance != "none") {
    throw ValidationError("--balance must be 'none' or 'rotate'");
  }
  auto split = stratified_split(ds, split_spec(ds, s));
  if (f.subjects_per_class > 0) {
    split.train = subsample_per_class(split.train, f.subjects_per_class, derive_seed(s.seed, {hash_name("subsample")}));
  }
  spdlog::info("holdouts: val {} / test {}; training pool {} subjects, {} folds", split.val.size(), split.test.size(),
               split.train.size(), f.folds);
  const auto results = kfold_on_split(split, f.folds, s.seed, cfg, mc, init);

  const fs::path out(s.out);
  const std::string tag = dataset_tag(f.tag, s.data);
  const Arm arm = init ? Arm::kPretrained : Arm::kScratch;
  const std::size_t spc = f.subjects_per_class ? f.subjects_per_class : max_per_class(split.train);
  std::string folds_csv = "fold,best_val_auc,test_auc,epochs_to_best,epochs_run\n";
  std::vector<RunRow> rows;
  std::vector<FoldResult> fold_results;
  std::size_t best = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i].result;
    folds_csv += std::to_string(r.fold) + "," + format_double(r.best_val_auc) + "," + format_double(r.test_auc) + "," +
                 std::to_string(r.epochs_to_best) + "," + std::to_string(r.epochs_run) + "\n";
    rows.push_back({tag, arm, spc, r.fold, r.test_auc});
    fold_results.push_back(r);
    if (r.best_val_auc > results[best].result.best_val_auc) best = i;
    std::cout << "fold " << r.fold << ": test AUC " << format_double(r.test_auc) << ", best epoch "
              << r.epochs_to_best << "\n";
  }
  write_file_atomic(out / "folds.csv", folds_csv);
  write_file_atomic(out / "runs.csv", format_runs_csv(rows));
  write_file_atomic(out / "history.csv", history_csv(fold_results, true));
  save_checkpoint(results[best].checkpoint, out / "finetune.ckpt");
  std::vector<double> aucs;
  for (const auto& r : fold_results) aucs.push_back(r.test_auc);
  const auto rep = summarize(aucs, tag, arm, spc);
  std::cout << "finetune " << arm_tag(arm) << ": mean test AUC " << format_double(rep.mean) << ", median "
            << format_double(rep.median) << " over " << aucs.size() << " folds\n";

  RunManifest m;
  m.seeds["seed"] = s.seed;
  m.inputs = {s.data};
  if (init) m.inputs.push_back(f.init);
  for (const char* name : {"folds.csv", "runs.csv", "history.csv", "finetune.ckpt"}) {
    m.outputs.push_back((out / name).string());
  }
  return m;
}

struct SweepFlags {
  Shared shared;
  std::string init;
  std::vector<std::string> sizes = {"15", "25", "full"};
  std::size_t repeats = 5;
  std::string tag;
};

RunManifest cmd_sweep(const SweepFlags& f) {
  const Shared& s = f.shared;
  const Dataset ds = load_input(s);
  prepare_out(s);
  const auto cfg = train_config(s);
  const auto mc = model_config(ds, s);
  std::optional<Checkpoint> storage;
  const Checkpoint* ckpt = resolve_init(f.init, storage);
  if (!ckpt) throw ValidationError("sweep needs --init pointing at a pretext checkpoint for the PTR arm");
  initial_params(cfg, mc, ckpt);

  const auto spec = split_spec(ds, s);
  const std::size_t full = max_per_class(stratified_split(ds, spec).train);
  std::vector<std::size_t> sizes;
  for (const auto& token : f.sizes) {
    if (token == "full") {
      sizes.push_back(full);
      continue;
    }
    std::size_t used = 0;
    std::size_t v = 0;
    try {
      v = std::stoul(token, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != token.size() || v == 0) throw ValidationError("--sizes entries must be positive integers or 'full'");
    sizes.push_back(v);
  }
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());

  const auto res = sweep_subjects_per_class(ds, sizes, {{Arm::kPretrained, ckpt}, {Arm::kScratch, nullptr}},
                                            f.repeats, spec, cfg, mc);
  const std::string tag = dataset_tag(f.tag, s.data);
  std::vector<RunRow> rows;
  std::string detail = "dataset,arm,subjects_per_class,repeat,test_auc,best_val_auc,epochs_to_best,epochs_run\n";
  for (const auto& r : res.runs) {
    rows.push_back({tag, r.arm, r.subjects_per_class, r.repeat, r.result.test_auc});
    detail += tag + "," + arm_tag(r.arm) + "," + std::to_string(r.subjects_per_class) + "," +
              std::to_string(r.repeat) + "," + format_double(r.result.test_auc) + "," +
              format_double(r.result.best_val_auc) + "," + std::to_string(r.result.epochs_to_best) + "," +
              std::to_string(r.result.epochs_run) + "\n";
  }
  const auto reports = group_runs(rows);
  const fs::path out(s.out);
  write_file_atomic(out / "runs.csv", format_runs_csv(rows));
  write_file_atomic(out / "runs_detail.csv", detail);
  write_file_atomic(out / "summary.csv", format_summary_csv(reports));
  write_file_atomic(out / "comparison.csv", comparison_csv(reports));
  std::cout << kComparisonHeader << "\n";
  for (const auto& l : comparison_lines(reports)) std::cout << l << "\n";

  RunManifest m;
  m.seeds["seed"] = s.seed;
  m.inputs = {s.data, f.init};
  for (const char* name : {"runs.csv", "runs_detail.csv", "summary.csv", "comparison.csv"}) {
    m.outputs.push_back((out / name).string());
  }
  return m;
}

struct GradcheckFlags {
  std::string out = "gradcheck-out";
  std::size_t seed = 0;
  std::size_t points = 100;
  std::string corrupt;
};

RunManifest cmd_gradcheck(const GradcheckFlags& f) {
  SuiteOptions opts;
  opts.points = f.points;
  opts.seed = f.seed;
  opts.corrupt_op = f.corrupt;
  if (!f.corrupt.empty()) {
    const auto ops = gradcheck_suite_ops();
    if (std::find(ops.begin(), ops.end(), f.corrupt) == ops.end()) {
      throw ValidationError("--corrupt names no checked op: " + f.corrupt);
    }
  }
  constexpr double kTolerance = 1e-4;
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = run_gradcheck_suite(opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::string csv = "op,points,checked,max_rel_error,worst_param,worst_index,status\n";
  std::vector<std::string> failed;
  for (const auto& c : checks) {
    const bool ok = c.result.max_rel_error <= kTolerance;
    if (!ok) failed.push_back(c.op);
    std::cout << fmt::format("{:<22} max rel. error {:.3e}  {}\n", c.op, c.result.max_rel_error, ok ? "PASS" : "FAIL");
    csv += c.op + "," + std::to_string(c.points) + "," + std::to_string(c.result.checked) + "," +
           format_double(c.result.max_rel_error) + "," + c.result.worst_param + "," +
           std::to_string(c.result.worst_index) + "," + (ok ? "PASS" : "FAIL") + "\n";
  }
  std::cout << fmt::format("gradcheck: {} ops in {:.2f} s, tolerance {:g}\n", checks.size(), secs, kTolerance);
  fs::create_directories(f.out);
  write_file_atomic(fs::path(f.out) / "gradcheck.csv", csv);

  RunManifest m;
  m.seeds["seed"] = f.seed;
  m.outputs = {(fs::path(f.out) / "gradcheck.csv").string()};
  if (!failed.empty()) {
    std::string names;
    for (const auto& n : failed) names += (names.empty() ? "" : ", ") + n;
    // The manifest is still written by the caller before the failure surfaces.
    throw CheckFailed("gradient check failed for: " + names);
  }
  return m;
}

struct ReportFlags {
  std::vector<std::string> runs;
  std::string out;
  std::string group_by = "none";
};

RunManifest cmd_report(const ReportFlags& f) {
  if (f.group_by != "none" && f.group_by != "dataset") throw ValidationError("--group-by must be 'none' or 'dataset'");
  std::vector<RunRow> rows;
  for (const auto& path : f.runs) {
    if (!fs::exists(path)) throw ValidationError("runs file not found: " + path);
    auto part = parse_runs_csv(read_file(path));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  if (rows.empty()) throw ValidationError("no runs to report");
  std::set<std::string> tags;
  for (const auto& r : rows) tags.insert(r.dataset);
  if (tags.size() > 1 && f.group_by == "none") {
    throw ValidationError("runs mix " + std::to_string(tags.size()) + " dataset tags; pass --group-by dataset");
  }
  const auto reports = group_runs(rows);
  fs::create_directories(f.out);
  const fs::path out(f.out);
  write_file_atomic(out / "summary.csv", format_summary_csv(reports));
  write_file_atomic(out / "comparison.csv", comparison_csv(reports));
  RunManifest m;
  m.inputs = f.runs;
  m.outputs = {(out / "summary.csv").string(), (out / "comparison.csv").string()};
  for (const auto& tag : tags) {
    std::vector<EvalReport> mine;
    for (const auto& r : reports) {
      if (r.dataset == tag) mine.push_back(r);
    }
    const fs::path svg = out / (tag + "_auc.svg");
    write_file_atomic(svg, auc_box_plot(tag, mine));
    m.outputs.push_back(svg.string());
  }
  for (const auto& r : reports) {
    std::cout << fmt::format("{} {} n/class={} runs={} mean={:.4f} median={:.4f}\n", r.dataset, arm_tag(r.arm),
                             r.subjects_per_class, r.aucs.size(), r.mean, r.median);
  }
  return m;
}

void setup_logging() {
  static bool done = false;
  if (done) return;
  auto logger = spdlog::stderr_logger_mt("tdir");
  logger->set_pattern("[%H:%M:%S.%e] %v");
  spdlog::set_default_logger(logger);
  done = true;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CheckFailed*>(&e)) return kExitRuntime;
  if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const DataError*>(&e) ||
      dynamic_cast<const CheckpointError*>(&e) || dynamic_cast<const TrainError*>(&e) ||
      dynamic_cast<const EvalError*>(&e)) {
    return kExitValidation;
  }
  return kExitRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  setup_logging();
  CLI::App app{"tdir: time-direction pretraining for multichannel time series", "tdir"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TDIR_VERSION);

  std::map<std::string, Command> commands;
  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.flags = std::make_unique<FlagSet>(c.app);
    return c;
  };

  SynthFlags synth;
  {
    auto& c = add("synth", "Generate a synthetic time-irreversible dataset");
    auto& f = *c.flags;
    f.add("out", synth.out, "Output dataset directory")->required();
    f.add("seed", synth.seed, "Generator seed");
    f.add("components", synth.components, "Components per subject");
    f.add("timepoints", synth.timepoints, "Timepoints per subject");
    f.add("subjects-per-class", synth.subjects_per_class, "Subjects per class");
    f.add("classes", synth.classes, "Number of classes");
    f.add("asymmetry", synth.asymmetry, "Scale of the skewed shock term");
    f.add("noise", synth.noise, "Scale of the Gaussian term");
    f.add("ar", synth.ar, "Per-class lag1:lag2 pairs, comma separated");
    f.add("jitter", synth.jitter, "Per-subject standard deviation added to lag1");
    f.add("mixing-neighbors", synth.mixing_neighbors, "Components mixed into each component");
    f.add("mixing-weight", synth.mixing_weight, "Weight of the mixed-in components");
    f.add("mixing-seed", synth.mixing_seed, "Seed of the mixing, independent of --seed");
    f.add("burn-in", synth.burn_in, "Discarded leading samples");
    f.flag("gaussian-only", synth.gaussian_only, "Time-reversible linear Gaussian process");
    f.flag("independent-shocks", synth.independent_shocks, "Per-component shock sequences");
    c.body = [&] { return cmd_synth(synth); };
  }

  Shared pre;
  {
    auto& c = add("pretrain", "Train the time-direction pretext task and write a checkpoint");
    add_shared(*c.flags, pre);
    c.body = [&] { return cmd_pretrain(pre); };
  }

  FinetuneFlags ft;
  {
    auto& c = add("finetune", "Fine-tune (or train from scratch) on class labels with k-fold runs");
    auto& f = *c.flags;
    add_shared(f, ft.shared);
    f.add("init", ft.init, "'scratch' or a pretext checkpoint");
    f.add("folds", ft.folds, "k for the k-fold runs");
    f.add("balance", ft.balance, "'none' or 'rotate' (minority-sized majority blocks)");
    f.add("trial", ft.trial, "Rotation index for --balance rotate");
    f.add("subjects-per-class", ft.subjects_per_class, "Training subjects per class (0: all)");
    f.add("tag", ft.tag, "Dataset tag for result files (default: data directory name)");
    f.flag("keep-head", ft.keep_head, "Keep the checkpoint's output layer instead of reinitializing it");
    c.body = [&] { return cmd_finetune(ft); };
  }

  SweepFlags sw;
  {
    auto& c = add("sweep", "PTR vs NPT over subjects-per-class sizes");
    auto& f = *c.flags;
    add_shared(f, sw.shared);
    f.add("init", sw.init, "Pretext checkpoint for the PTR arm")->required();
    f.list("sizes", sw.sizes, "Subjects per class, comma separated; 'full' is the whole pool");
    f.add("repeats", sw.repeats, "Repeats per (size, arm)");
    f.add("tag", sw.tag, "Dataset tag for result files (default: data directory name)");
    c.body = [&] { return cmd_sweep(sw); };
  }

  GradcheckFlags gc;
  {
    auto& c = add("gradcheck", "Check every primitive and the reduced model against finite differences");
    auto& f = *c.flags;
    f.add("out", gc.out, "Output directory");
    f.add("seed", gc.seed, "Seed for the random check points");
    f.add("points", gc.points, "Random points per primitive");
    f.add("corrupt", gc.corrupt, "Test hook: offset the analytic gradient of this op");
    c.body = [&] { return cmd_gradcheck(gc); };
  }

  ReportFlags rep;
  {
    auto& c = add("report", "Summaries, PTR/NPT comparison and SVG box plots from per-run CSVs");
    auto& f = *c.flags;
    f.list("runs", rep.runs, "Per-run CSV files")->required();
    f.add("out", rep.out, "Output directory")->required();
    f.add("group-by", rep.group_by, "'none' or 'dataset'");
    c.body = [&] { return cmd_report(rep); };
  }

  std::string replay_path, replay_out;
  CLI::App* replay = app.add_subcommand("replay", "Re-run the command recorded in a run manifest");
  replay->add_option("manifest", replay_path, "run_manifest.json")->required();
  replay->add_option("--out", replay_out, "Write to this directory instead of the recorded one");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (replay->parsed()) {
    try {
      const auto m = read_manifest(replay_path);
      if (m.command == "replay" || !commands.count(m.command)) {
        throw ValidationError("manifest names an unknown command: " + m.command);
      }
      spdlog::info("replaying {} from {}", m.command, replay_path);
      return run(m.replay_args(replay_out));
    } catch (const std::exception& e) {
      spdlog::error("{}", e.what());
      return exit_code_for(e);
    }
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    RunManifest m;
    int code = kExitOk;
    std::string error;
    try {
      m = cmd.body();
    } catch (const std::exception& e) {
      code = exit_code_for(e);
      error = e.what();
    }
    m.command = name;
    m.flags = cmd.flags->resolved();
    m.tool_version = TDIR_VERSION;
    m.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string out = m.flags.count("out") ? m.flags.at("out") : "";
    if (code == kExitOk || (name == "gradcheck" && code == kExitRuntime)) {
      try {
        fs::create_directories(out);
        write_manifest(m, out);
      } catch (const std::exception& e) {
        spdlog::error("writing the run manifest failed: {}", e.what());
        return kExitRuntime;
      }
    }
    if (code != kExitOk) spdlog::error("{}", error);
    return code;
  }
  return kExitValidation;
}

}  // namespace tdir::cli
