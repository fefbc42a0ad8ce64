// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   tdir_acceptance [--only 1,4,6] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "cli/cli.hpp"
#include "tdir/checkpoint.hpp"
#include "tdir/data.hpp"
#include "tdir/eval.hpp"
#include "tdir/io.hpp"
#include "tdir/rng.hpp"
#include "tdir/train.hpp"

namespace fs = std::filesystem;
using namespace tdir;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradBudgetSeconds = 60.0;
constexpr double kAucOracleTolerance = 1e-12;
constexpr double kPretextAucFloor = 0.9;
constexpr double kPretextBudgetSeconds = 15 * 60.0;
constexpr double kNullLow = 0.4, kNullHigh = 0.6;
constexpr double kOverfitLoss = 0.05;
constexpr std::size_t kOverfitSteps = 500;

// Experiment sizes.
constexpr std::size_t kPretextSubjectsPerClass = 100;  // 200 subjects
constexpr std::size_t kPretextHoldout = 30;            // val and test subjects each
constexpr std::size_t kPretextMaxEpochs = 50;
constexpr std::size_t kPretextPatience = 5;
// The null needs a larger test holdout: a subject's forward and reversed
// scores are correlated, so with 30 test subjects a chance-level AUC has a
// standard deviation near 0.1.
constexpr std::size_t kNullSubjectsPerClass = 150;
constexpr std::size_t kNullTestSubjects = 120;
// Transfer: a large unlabelled pretext set drawn from the control dynamics,
// then a small labelled set where one class has a faster-decaying first lag.
constexpr std::size_t kTransferPretextSubjects = 823;
constexpr std::size_t kTransferPretextHoldout = 50;
constexpr std::size_t kTransferPretextMaxEpochs = 15;
constexpr std::size_t kTransferPretextPatience = 5;
constexpr double kTransferJitter = 0.1;
constexpr std::size_t kTransferValPerClass = 15;
constexpr std::size_t kTransferTestPerClass = 30;
constexpr std::size_t kTransferFull = 50;
constexpr std::size_t kTransferRepeats = 5;
constexpr std::size_t kTransferMaxEpochs = 30;
constexpr std::size_t kTransferPatience = 10;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::size_t jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

ModelConfig default_model() { return ModelConfig{}; }

SynthConfig pretext_family(std::uint64_t seed) {
  SynthConfig c;
  c.subjects_per_class = kPretextSubjectsPerClass;
  c.asymmetry_strength = 1.5;
  c.seed = seed;
  return c;
}

TrainConfig pretext_train_config(std::uint64_t seed) {
  TrainConfig t;
  t.max_epochs = kPretextMaxEpochs;
  t.patience = kPretextPatience;
  t.seed = seed;
  t.jobs = jobs();
  return t;
}

PretextRun run_pretext(const SynthConfig& sc, std::uint64_t seed, std::size_t test_subjects = kPretextHoldout) {
  return pretrain_dataset(synth_generate(sc), {kPretextHoldout, test_subjects, seed, true},
                          pretext_train_config(seed), default_model());
}

// ---------------------------------------------------------------------------

Outcome criterion1(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cli::run({"gradcheck", "--out", (work / "gradcheck").string(), "--points", "100"});
  const double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_op;
  const auto csv = read_file(work / "gradcheck" / "gradcheck.csv");
  std::size_t pos = csv.find('\n') + 1;
  std::size_t ops = 0;
  while (pos < csv.size()) {
    const auto end = csv.find('\n', pos);
    const std::string line = csv.substr(pos, end - pos);
    pos = end + 1;
    std::vector<std::string> f;
    std::size_t s = 0, c;
    while ((c = line.find(',', s)) != std::string::npos) {
      f.push_back(line.substr(s, c - s));
      s = c + 1;
    }
    const double err = std::stod(f.at(3));
    ++ops;
    if (err >= worst) {
      worst = err;
      worst_op = f.at(0);
    }
  }
  return {code == 0 && worst <= kGradTolerance && secs <= kGradBudgetSeconds,
          std::to_string(ops) + " ops, worst " + worst_op + " " + std::to_string(worst) + ", " + fmt3(secs) + " s"};
}

Outcome criterion2() {
  Rng rng(2);
  double worst = 0.0, worst_complement = 0.0;
  bool monotone_exact = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    ScoredSet s;
    const bool coarse = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s.scores.push_back(coarse ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform());
      s.labels.push_back(static_cast<int>(rng.below(2)));
    }
    s.labels[0] = 0;
    s.labels[1] = 1;
    for (std::size_t i = 2; i < n; i += 7) s.scores[i] = s.scores[i - 1];  // ties
    const double a = auc(s);
    worst = std::max(worst, std::abs(a - auc_bruteforce_oracle(s)));
    ScoredSet flipped = s;
    for (auto& l : flipped.labels) l = 1 - l;
    worst_complement = std::max(worst_complement, std::abs(a + auc(flipped) - 1.0));
    for (const auto& map : std::vector<std::function<double(double)>>{[](double x) { return std::exp(x); },
                                                                        [](double x) { return 3.0 * x + 1.0; }}) {
      ScoredSet t = s;
      for (auto& v : t.scores) v = map(v);
      monotone_exact = monotone_exact && auc(t) == a;
    }
  }
  return {worst <= kAucOracleTolerance && worst_complement <= kAucOracleTolerance && monotone_exact,
          "max |auc-oracle| " + std::to_string(worst) + ", max complement error " +
              std::to_string(worst_complement) + ", monotone " + (monotone_exact ? "exact" : "inexact")};
}

Outcome criterion3() {
  SynthConfig c;
  c.n_classes = 1;
  c.ar_coefficients = {{0.5, 0.2}};
  c.subjects_per_class = 823;
  c.seed = 3;
  const auto ds = synth_generate(c);
  const auto pretext = make_pretext_dataset(ds, 20);
  std::size_t fwd = 0, rev = 0;
  bool seven = true;
  for (const auto& p : pretext) {
    (p.direction == Direction::kForward ? fwd : rev) += 1;
    seven = seven && p.sample.windows.size() == 7;
  }
  bool involution = true;
  for (const auto& r : ds.records) {
    involution = involution && reverse_time(reverse_time(r)).matrix.values == r.matrix.values;
  }
  return {ds.size() == 823 && pretext.size() == 1646 && fwd == 823 && rev == 823 && involution && seven,
          std::to_string(ds.size()) + " subjects -> " + std::to_string(pretext.size()) + " samples (" +
              std::to_string(fwd) + " forward, " + std::to_string(rev) + " reversed), involution " +
              (involution ? "bit-exact" : "BROKEN") + ", 7 windows per 140-point subject " + (seven ? "yes" : "no")};
}

Outcome criterion4() {
  std::vector<double> aucs;
  double slowest = 0.0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    auto run = run_pretext(pretext_family(seed), seed);
    const double secs = seconds_since(t0);
    slowest = std::max(slowest, secs);
    aucs.push_back(run.pretrain.result.test_auc);
    detail += "seed " + std::to_string(seed) + ": " + fmt3(run.pretrain.result.test_auc) + " (epoch " +
              std::to_string(run.pretrain.result.epochs_to_best) + ", " + fmt3(secs) + " s); ";
  }
  const double med = median_of(aucs);
  return {med >= kPretextAucFloor && slowest <= kPretextBudgetSeconds, detail + "median " + fmt3(med)};
}

Outcome criterion5() {
  std::vector<double> aucs;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto sc = pretext_family(100 + seed);
    sc.subjects_per_class = kNullSubjectsPerClass;
    sc.asymmetry_strength = 0.0;
    sc.gaussian_only = true;
    const auto run = run_pretext(sc, seed, kNullTestSubjects);
    aucs.push_back(run.pretrain.result.test_auc);
    detail += fmt3(run.pretrain.result.test_auc) + " ";
  }
  const double med = median_of(aucs);
  return {med >= kNullLow && med <= kNullHigh, "held-out AUCs " + detail + "median " + fmt3(med)};
}

struct TransferOutcome {
  Outcome benefit;
  Outcome convergence;
};

TransferOutcome criteria6and7() {
  SynthConfig pretext;
  pretext.n_classes = 1;
  pretext.ar_coefficients = {{0.5, 0.2}};
  pretext.subjects_per_class = kTransferPretextSubjects;
  pretext.subject_jitter = kTransferJitter;
  pretext.seed = 11;
  TrainConfig pretext_cfg;
  pretext_cfg.max_epochs = kTransferPretextMaxEpochs;
  pretext_cfg.patience = kTransferPretextPatience;
  pretext_cfg.seed = 11;
  pretext_cfg.jobs = jobs();
  const Checkpoint checkpoint =
      pretrain_dataset(synth_generate(pretext), {kTransferPretextHoldout, kTransferPretextHoldout, 0, true},
                       pretext_cfg, default_model())
          .pretrain.checkpoint;

  SynthConfig down;
  down.ar_coefficients = {{0.5, 0.2}, {0.1, 0.2}};
  down.subjects_per_class = kTransferFull + kTransferValPerClass + kTransferTestPerClass;
  down.subject_jitter = kTransferJitter;
  down.seed = 7;
  const Dataset ds = synth_generate(down);
  TrainConfig cfg;
  cfg.max_epochs = kTransferMaxEpochs;
  cfg.patience = kTransferPatience;
  cfg.jobs = jobs();
  const SplitSpec spec{2 * kTransferValPerClass, 2 * kTransferTestPerClass, 0, true};
  const std::size_t full = max_per_class(stratified_split(ds, spec).train);
  const std::vector<std::size_t> sizes{15, 25, full};
  const std::vector<SweepArm> arms{{Arm::kPretrained, &checkpoint}, {Arm::kScratch, nullptr}};
  const auto res = sweep_subjects_per_class(ds, sizes, arms, kTransferRepeats, spec, cfg, default_model());

  std::map<std::pair<std::size_t, Arm>, std::vector<double>> aucs, epochs;
  for (const auto& r : res.runs) {
    aucs[{r.subjects_per_class, r.arm}].push_back(r.result.test_auc);
    epochs[{r.subjects_per_class, r.arm}].push_back(static_cast<double>(r.result.epochs_to_best));
  }
  std::map<std::size_t, double> delta;
  bool ptr_not_worse = true;
  std::string detail;
  for (auto s : sizes) {
    const double p = median_of(aucs[{s, Arm::kPretrained}]), n = median_of(aucs[{s, Arm::kScratch}]);
    delta[s] = p - n;
    if (s != full) ptr_not_worse = ptr_not_worse && p >= n;
    detail += "n=" + std::to_string(s) + " PTR " + fmt3(p) + " NPT " + fmt3(n) + "; ";
  }
  const bool shrinking = delta[15] >= delta[full];
  TransferOutcome out;
  out.benefit = {ptr_not_worse && shrinking,
                 detail + "delta@15 " + fmt3(delta[15]) + " vs delta@" + std::to_string(full) + " " +
                     fmt3(delta[full])};

  std::vector<double> ptr_epochs, npt_epochs;
  for (const auto& [key, v] : epochs) {
    auto& dst = key.second == Arm::kPretrained ? ptr_epochs : npt_epochs;
    dst.insert(dst.end(), v.begin(), v.end());
  }
  const double pe = median_of(ptr_epochs), ne = median_of(npt_epochs);
  out.convergence = {pe <= ne, "median epochs_to_best PTR " + fmt3(pe) + " vs NPT " + fmt3(ne) + " over " +
                                   std::to_string(ptr_epochs.size()) + " runs per arm"};
  return out;
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) names.insert(fs::relative(e.path(), a).string());
  }
  for (const auto& e : fs::recursive_directory_iterator(b)) {
    if (e.is_regular_file()) names.insert(fs::relative(e.path(), b).string());
  }
  for (const auto& n : names) {
    if (n == "run_manifest.json") continue;  // records paths and wall-clock time
    if (!fs::exists(a / n) || !fs::exists(b / n) || read_file(a / n) != read_file(b / n)) {
      why = n;
      return false;
    }
  }
  return true;
}

Outcome criterion8(const fs::path& work) {
  const auto d = [&](const char* n) { return (work / "det" / n).string(); };
  std::vector<std::vector<std::string>> steps{
      {"synth", "--out", d("data"), "--subjects-per-class", "10", "--seed", "5"},
      {"pretrain", "--data", d("data"), "--out", d("pre_a"), "--epochs", "2", "--patience", "2", "--seed", "3"},
      {"pretrain", "--data", d("data"), "--out", d("pre_b"), "--epochs", "2", "--patience", "2", "--seed", "3"},
      {"sweep", "--data", d("data"), "--out", d("sweep_a"), "--init", d("pre_a") + "/pretrain.ckpt", "--sizes", "2,3",
       "--repeats", "2", "--epochs", "2", "--patience", "1", "--val-size", "4", "--test-size", "4", "--seed", "4"},
      {"sweep", "--data", d("data"), "--out", d("sweep_b"), "--init", d("pre_a") + "/pretrain.ckpt", "--sizes", "2,3",
       "--repeats", "2", "--epochs", "2", "--patience", "1", "--val-size", "4", "--test-size", "4", "--seed", "4"},
      {"replay", d("pre_a") + "/run_manifest.json", "--out", d("pre_replay")},
      {"replay", d("sweep_a") + "/run_manifest.json", "--out", d("sweep_replay")},
      {"replay", d("data") + "/run_manifest.json", "--out", d("data_replay")},
  };
  for (const auto& s : steps) {
    if (cli::run(s) != 0) return {false, "command failed: " + s[0] + " " + s[1] + " " + s[2]};
  }
  std::string why;
  const std::vector<std::pair<std::string, std::string>> pairs{
      {"pre_a", "pre_b"}, {"sweep_a", "sweep_b"}, {"pre_a", "pre_replay"}, {"sweep_a", "sweep_replay"},
      {"data", "data_replay"}};
  for (const auto& [a, b] : pairs) {
    if (!same_tree(d(a.c_str()), d(b.c_str()), why)) return {false, a + " vs " + b + " differ in " + why};
  }
  const auto bytes = read_file(d("pre_a") + "/pretrain.ckpt");
  save_checkpoint(load_checkpoint(d("pre_a") + "/pretrain.ckpt"), d("resaved.ckpt"));
  const bool resave = read_file(d("resaved.ckpt")) == bytes;
  return {resave, "reruns and manifest replays byte-identical (data, checkpoint, history, sweep CSVs); "
                  "checkpoint save-load-save " +
                      std::string(resave ? "identical" : "DIFFERS")};
}

Outcome criterion9() {
  Rng rng(9);
  bool exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    Dataset ds;
    ds.class_names = {"a", "b", "c"};
    const std::size_t classes = 2 + rng.below(2);
    ds.class_names.resize(classes);
    std::map<int, std::size_t> per;
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t n = 3 + rng.below(40);
      for (std::size_t i = 0; i < n; ++i) {
        SubjectRecord r;
        r.subject_id = "t" + std::to_string(trial) + "-" + std::to_string(c) + "-" + std::to_string(i);
        r.label = static_cast<int>(c);
        r.matrix = Tensor<float>({1, 1});
        ds.records.push_back(r);
      }
    }
    const std::size_t val = rng.below(ds.size() / 4 + 1), test = rng.below(ds.size() / 4 + 1);
    const auto s = stratified_split(ds, {val, test, rng.next_u64(), true});
    std::multiset<std::string> all;
    for (const auto* part : {&s.train, &s.val, &s.test})
      for (const auto& r : part->records) all.insert(r.subject_id);
    std::multiset<std::string> expected;
    for (const auto& r : ds.records) expected.insert(r.subject_id);
    exact = exact && all == expected && s.val.size() == val && s.test.size() == test;
  }

  Dataset oasis;
  oasis.class_names = {"HC", "AD"};
  for (std::size_t i = 0; i < 651 + 172; ++i) {
    SubjectRecord r;
    r.subject_id = "o" + std::to_string(i);
    r.label = i < 651 ? 0 : 1;
    r.matrix = Tensor<float>({1, 1});
    oasis.records.push_back(r);
  }
  const std::size_t trials = (651 + 171) / 172;
  std::set<std::string> seen;
  for (std::size_t t = 0; t < trials; ++t) {
    for (const auto& r : balance_classes(oasis, 11, t).records) {
      if (r.label == 0) seen.insert(r.subject_id);
    }
  }
  return {exact && trials == 4 && seen.size() == 651,
          std::string("100 random splits ") + (exact ? "exact partitions" : "NOT exact") + "; rotation covers " +
              std::to_string(seen.size()) + "/651 majority subjects in " + std::to_string(trials) + " trials"};
}

Outcome criterion10() {
  const ModelConfig mc = default_model();
  auto params = init_params(mc, 10);
  Rng rng(10);
  std::vector<WindowedSample> samples(4);
  for (std::size_t i = 0; i < 4; ++i) {
    samples[i].label = static_cast<int>(i % 2);
    samples[i].subject_id = "toy" + std::to_string(i);
    for (int w = 0; w < 7; ++w) {
      Tensor<float> t({mc.components, mc.window_len});
      for (auto& v : t.values) v = static_cast<float>(rng.normal());
      samples[i].windows.push_back(std::move(t));
    }
  }
  std::vector<const WindowedSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  AdamState state;
  double loss = 1e9;
  std::size_t step = 0;
  while (step < kOverfitSteps) {
    auto bg = batch_gradients(params, batch, mc, jobs());
    loss = bg.loss_sum / 4.0;
    if (loss < kOverfitLoss) break;
    for (auto& [n, g] : bg.grads)
      for (auto& x : g) x /= 4.0f;
    adam_step(params, bg.grads, state, cfg);
    ++step;
  }
  return {loss < kOverfitLoss, "loss " + std::to_string(loss) + " after " + std::to_string(step) + " Adam steps"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path work = fs::temp_directory_path() / "tdir-acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::string list = argv[++i];
      std::size_t s = 0, c;
      while ((c = list.find(',', s)) != std::string::npos) {
        only.insert(std::stoi(list.substr(s, c - s)));
        s = c + 1;
      }
      only.insert(std::stoi(list.substr(s)));
    } else if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--work DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);
  spdlog::set_level(spdlog::level::warn);

  const auto want = [&](int n) { return only.empty() || only.count(n); };
  int failures = 0;
  const auto report = [&](int n, const char* name, const Outcome& o, double secs) {
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };
  const auto timed = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    if (!want(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    report(n, name, o, seconds_since(t0));
  };

  timed(1, "gradient correctness", [&] { return criterion1(work); });
  timed(2, "AUC oracle equivalence", criterion2);
  timed(3, "pretext construction", criterion3);
  timed(4, "pretext learnability", criterion4);
  timed(5, "null control", criterion5);
  if (want(6) || want(7)) {
    const auto t0 = std::chrono::steady_clock::now();
    TransferOutcome t;
    try {
      t = criteria6and7();
    } catch (const std::exception& e) {
      t.benefit = t.convergence = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    if (want(6)) report(6, "transfer benefit", t.benefit, secs);
    if (want(7)) report(7, "faster convergence", t.convergence, secs);
  }
  timed(8, "determinism and persistence", [&] { return criterion8(work); });
  timed(9, "split and balancing contracts", criterion9);
  timed(10, "optimization sanity", criterion10);

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
