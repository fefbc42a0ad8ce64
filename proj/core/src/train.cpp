#include "tdir/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdir/parallel.hpp"
#include "tdir/rng.hpp"

namespace tdir {

namespace {

// Gradient lanes per batch. Fixed so summation order never depends on the
// thread count.
constexpr std::size_t kLanes = 4;

std::string fmt_double(double v) { return format_double(v); }

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (batch_size == 0) fail("batch_size must be at least 1");
  if (max_epochs == 0) fail("max_epochs must be at least 1");
  if (patience > max_epochs) fail("patience cannot exceed max_epochs");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
}

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState s;
  s.first_moment = zero_gradients(params);
  s.second_moment = zero_gradients(params);
  return s;
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const TrainConfig& config) {
  for (const auto& [name, t] : params) {
    if (!grads.count(name)) throw TrainError("adam: missing gradient for parameter " + name);
  }
  if (state.first_moment.empty()) state = AdamState::for_params(params);
  state.step += 1;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (auto& [name, tensor] : params) {
    const auto& g = grads.at(name);
    auto& m = state.first_moment.at(name);
    auto& v = state.second_moment.at(name);
    if (g.size() != tensor.size() || m.size() != tensor.size()) {
      throw TrainError("adam: buffer size mismatch for parameter " + name);
    }
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = config.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.adam_eps);
      tensor.values[i] = static_cast<float>(tensor.values[i] - update);
    }
  }
}

BatchGradients batch_gradients(const ModelParams& params, const std::vector<const WindowedSample*>& samples,
                               const ModelConfig& config, std::size_t jobs) {
  const std::size_t n = samples.size();
  const std::size_t lanes = std::min(kLanes, std::max<std::size_t>(n, 1));
  std::vector<Gradients> lane_grads(lanes);
  std::vector<double> lane_loss(lanes, 0.0);
  parallel_for(lanes, jobs, [&](std::size_t lane) {
    lane_grads[lane] = zero_gradients(params);
    const std::size_t begin = lane * n / lanes, end = (lane + 1) * n / lanes;
    for (std::size_t i = begin; i < end; ++i) {
      Tape<float> tape;
      const auto bound = bind_params(tape, params, lane_grads[lane]);
      const auto out = model_forward(tape, bound, *samples[i], config);
      const Var loss = tape.cross_entropy(out.classifier.probs, static_cast<std::size_t>(samples[i]->label));
      tape.backward(loss);
      lane_loss[lane] += tape.value(loss).values[0];
    }
  });
  BatchGradients out;
  out.grads = std::move(lane_grads[0]);
  out.loss_sum = lane_loss[0];
  for (std::size_t lane = 1; lane < lanes; ++lane) {
    out.loss_sum += lane_loss[lane];
    for (auto& [name, g] : out.grads) {
      const auto& src = lane_grads[lane].at(name);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
    }
  }
  return out;
}

ScoredSet score_samples(const ModelParams& params, const std::vector<WindowedSample>& samples,
                        const ModelConfig& config, std::size_t jobs) {
  ScoredSet s;
  s.scores.resize(samples.size());
  s.labels.resize(samples.size());
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const auto probs = predict(params, samples[i], config);
    s.scores[i] = probs.at(1);
    s.labels[i] = samples[i].label;
  });
  return s;
}

TrainingRun train_classifier(ModelParams initial, const std::vector<WindowedSample>& train,
                             const std::vector<WindowedSample>& val, const TrainConfig& config,
                             const ModelConfig& model_config, const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  if (train.empty()) throw TrainError("training set is empty");
  if (val.empty()) throw TrainError("validation set is empty");
  for (const auto* set : {&train, &val}) {
    for (const auto& s : *set) {
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= model_config.n_classes) {
        throw TrainError("sample " + s.subject_id + " has a label outside the model's classes");
      }
      for (const auto& w : s.windows) {
        if (w.dims != Shape{model_config.components, model_config.window_len}) {
          throw TrainError("sample " + s.subject_id + " window " + shape_str(w.dims) +
                           " does not match the model input " +
                           shape_str({model_config.components, model_config.window_len}));
        }
      }
    }
  }

  ModelParams params = std::move(initial);
  AdamState adam = AdamState::for_params(params);
  TrainingRun run;
  run.best_params = params;
  run.result.best_val_auc = -1.0;

  std::vector<std::size_t> order(train.size());
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, {hash_name("shuffle"), epoch}));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<const WindowedSample*> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&train[order[i]]);
      auto bg = batch_gradients(params, batch, model_config, config.jobs);
      loss_total += bg.loss_sum;
      const float scale = 1.0f / static_cast<float>(batch.size());
      for (auto& [name, g] : bg.grads) {
        for (auto& x : g) x *= scale;
      }
      adam_step(params, bg.grads, adam, config);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_total / static_cast<double>(train.size());
    rec.val_auc = auc(score_samples(params, val, model_config, config.jobs));
    run.result.history.push_back(rec);
    run.result.epochs_run = epoch;
    if (on_epoch) on_epoch(rec);

    if (rec.val_auc > run.result.best_val_auc) {
      run.result.best_val_auc = rec.val_auc;
      run.result.epochs_to_best = epoch;
      run.best_params = params;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return run;
}

// ---------------------------------------------------------------------------

PretrainResult pretrain(const std::vector<PretextSample>& train, const std::vector<PretextSample>& val,
                        const TrainConfig& config, const ModelConfig& model_config,
                        const EpochCallback& on_epoch) {
  if (train.empty() || val.empty()) throw TrainError("pretext train and validation sets must be non-empty");
  auto run = train_classifier(init_params(model_config, derive_seed(config.seed, {hash_name("init")})),
                              direction_targets(train), direction_targets(val), config, model_config,
                              on_epoch);
  PretrainResult out;
  out.result = std::move(run.result);
  out.checkpoint.config = model_config;
  out.checkpoint.params = std::move(run.best_params);
  out.checkpoint.metadata = {
      {"phase", "pretext"},
      {"epochs_run", std::to_string(out.result.epochs_run)},
      {"epochs_to_best", std::to_string(out.result.epochs_to_best)},
      {"best_val_auc", fmt_double(out.result.best_val_auc)},
      {"seed", std::to_string(config.seed)},
      {"train_samples", std::to_string(train.size())},
      {"val_samples", std::to_string(val.size())},
  };
  return out;
}

PretextRun pretrain_dataset(const Dataset& dataset, const SplitSpec& spec, const TrainConfig& config,
                            const ModelConfig& model_config, const EpochCallback& on_epoch) {
  const auto split = stratified_split(dataset, spec);
  auto pretext = [&](const Dataset& part) {
    return make_pretext_dataset(config.zscore ? zscore_normalize(part) : part, model_config.window_len);
  };
  const auto train = pretext(split.train);
  const auto val = pretext(split.val);
  PretextRun out;
  out.train_samples = train.size();
  out.val_samples = val.size();
  out.pretrain = pretrain(train, val, config, model_config, on_epoch);
  if (!split.test.empty()) {
    const auto test = pretext(split.test);
    out.test_samples = test.size();
    out.pretrain.result.test_auc =
        auc(score_samples(out.pretrain.checkpoint.params, direction_targets(test), model_config, config.jobs));
    out.pretrain.checkpoint.metadata["test_auc"] = fmt_double(out.pretrain.result.test_auc);
  }
  return out;
}

ModelParams initial_params(const TrainConfig& config, const ModelConfig& model_config,
                           const Checkpoint* init) {
  if (!init) return init_params(model_config, derive_seed(config.seed, {hash_name("init")}));
  if (!(init->config == model_config)) {
    throw TrainError("checkpoint model config does not match the requested model:\n" +
                     init->config.to_text() + "vs\n" + model_config.to_text());
  }
  ModelParams params = init->params;
  if (config.reinit_head) {
    for (const auto& name : head_output_names()) {
      init_tensor(params, name, derive_seed(config.seed, {hash_name("head")}));
    }
  }
  return params;
}

namespace {

std::vector<WindowedSample> prepare(const Dataset& ds, const TrainConfig& config, const ModelConfig& mc) {
  return window_dataset(config.zscore ? zscore_normalize(ds) : ds, mc.window_len);
}

}  // namespace

FinetuneResult finetune(const Dataset& train, const Dataset& val, const Dataset& test,
                        const TrainConfig& config, const ModelConfig& model_config,
                        const Checkpoint* init, const EpochCallback& on_epoch) {
  if (train.empty() || val.empty() || test.empty()) throw TrainError("finetune needs non-empty train, val and test splits");
  std::optional<Checkpoint> loaded;
  if (!init && config.init_from) {
    loaded = load_checkpoint(*config.init_from);
    init = &*loaded;
  }
  auto run = train_classifier(initial_params(config, model_config, init), prepare(train, config, model_config),
                              prepare(val, config, model_config), config, model_config, on_epoch);
  FinetuneResult out;
  out.result = std::move(run.result);
  out.result.test_auc = auc(score_samples(run.best_params, prepare(test, config, model_config),
                                          model_config, config.jobs));
  out.checkpoint.config = model_config;
  out.checkpoint.params = std::move(run.best_params);
  out.checkpoint.metadata = {
      {"phase", "finetune"},
      {"init", init ? "checkpoint" : "scratch"},
      {"epochs_run", std::to_string(out.result.epochs_run)},
      {"epochs_to_best", std::to_string(out.result.epochs_to_best)},
      {"best_val_auc", fmt_double(out.result.best_val_auc)},
      {"test_auc", fmt_double(out.result.test_auc)},
      {"seed", std::to_string(config.seed)},
  };
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw TrainError("k-fold needs k >= 2");
  if (n < k) throw TrainError("cannot split " + std::to_string(n) + " records into " + std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {hash_name("folds")}));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < n; ++i) folds[i % k].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::vector<FinetuneResult> kfold_on_split(const DatasetSplit& split, std::size_t k, std::uint64_t fold_seed,
                                           const TrainConfig& config, const ModelConfig& model_config,
                                           const Checkpoint* init) {
  const auto folds = kfold_partition(split.train.size(), k, fold_seed);
  std::optional<Checkpoint> loaded;
  if (!init && config.init_from) {
    loaded = load_checkpoint(*config.init_from);
    init = &*loaded;
  }
  std::vector<FinetuneResult> results(k);
  const std::size_t outer_jobs = std::min(config.jobs, k);
  parallel_for(k, outer_jobs, [&](std::size_t f) {
    std::vector<std::size_t> idx;
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) idx.insert(idx.end(), folds[g].begin(), folds[g].end());
    }
    std::sort(idx.begin(), idx.end());
    TrainConfig fold_cfg = config;
    fold_cfg.seed = derive_seed(config.seed, {hash_name("fold"), f});
    fold_cfg.jobs = outer_jobs > 1 ? 1 : config.jobs;
    auto res = finetune(select_records(split.train, idx), split.val, split.test, fold_cfg, model_config, init);
    res.result.fold = f;
    res.checkpoint.metadata["fold"] = std::to_string(f);
    results[f] = std::move(res);
  });
  return results;
}

std::vector<FoldResult> kfold_run(const Dataset& dataset, std::size_t k, const SplitSpec& spec,
                                  const TrainConfig& config, const ModelConfig& model_config,
                                  const Checkpoint* init) {
  std::vector<FoldResult> out;
  for (auto& r : kfold_on_split(stratified_split(dataset, spec), k, spec.seed, config, model_config, init)) {
    out.push_back(std::move(r.result));
  }
  return out;
}

std::size_t max_per_class(const Dataset& dataset) {
  std::map<int, std::size_t> counts;
  for (const auto& r : dataset.records) counts[r.label] += 1;
  if (counts.empty()) return 0;
  std::size_t m = counts.begin()->second;
  for (const auto& [label, c] : counts) m = std::min(m, c);
  return m;
}

Dataset sweep_subset(const Dataset& pool, std::size_t subjects_per_class, std::uint64_t seed,
                     std::size_t repeat) {
  return subsample_per_class(pool, subjects_per_class,
                             derive_seed(seed, {hash_name("sweep-subset"), repeat}));
}

SweepResult sweep_subjects_per_class(const Dataset& dataset, const std::vector<std::size_t>& sizes,
                                     const std::vector<SweepArm>& arms, std::size_t repeats,
                                     const SplitSpec& spec, const TrainConfig& config,
                                     const ModelConfig& model_config) {
  if (sizes.empty() || arms.empty() || repeats == 0) throw TrainError("sweep needs sizes, arms and repeats");
  for (const auto& a : arms) {
    if (a.arm == Arm::kPretrained && !a.checkpoint) throw TrainError("PTR arm requires a checkpoint");
  }
  const auto split = stratified_split(dataset, spec);
  const std::size_t cap = max_per_class(split.train);
  for (auto s : sizes) {
    if (s == 0 || s > cap) {
      throw TrainError("subjects-per-class " + std::to_string(s) + " infeasible: training pool holds at most " +
                       std::to_string(cap) + " per class");
    }
  }

  SweepResult out;
  out.pool_size = split.train.size();
  out.val_size = split.val.size();
  out.test_size = split.test.size();
  for (auto s : sizes)
    for (const auto& a : arms)
      for (std::size_t r = 0; r < repeats; ++r) out.runs.push_back({s, a.arm, r, {}});

  const std::size_t outer_jobs = std::min(config.jobs, out.runs.size());
  parallel_for(out.runs.size(), outer_jobs, [&](std::size_t i) {
    auto& run = out.runs[i];
    const SweepArm& arm = arms[(i / repeats) % arms.size()];
    TrainConfig run_cfg = config;
    run_cfg.seed = derive_seed(config.seed, {hash_name("sweep-run"), run.subjects_per_class,
                                             static_cast<std::uint64_t>(arm.arm), run.repeat});
    run_cfg.init_from.reset();
    run_cfg.jobs = outer_jobs > 1 ? 1 : config.jobs;
    const Dataset subset = sweep_subset(split.train, run.subjects_per_class, config.seed, run.repeat);
    run.result = finetune(subset, split.val, split.test, run_cfg, model_config,
                          arm.arm == Arm::kPretrained ? arm.checkpoint : nullptr)
                     .result;
    run.result.fold = run.repeat;
    spdlog::info("sweep size={} arm={} repeat={} test_auc={:.4f} epochs_to_best={}", run.subjects_per_class,
                 arm_tag(run.arm), run.repeat, run.result.test_auc, run.result.epochs_to_best);
  });
  return out;
}

}  // namespace tdir
