#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdir/checkpoint.hpp"
#include "tdir/data.hpp"
#include "tdir/eval.hpp"
#include "tdir/model.hpp"

namespace tdir {

struct TrainConfig {
  double learning_rate = 2e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  /// Epochs without a validation-AUC improvement before stopping.
  std::size_t patience = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Checkpoint to start from; empty means scratch.
  std::optional<std::filesystem::path> init_from;
  /// Replace the final output layer after loading a checkpoint.
  bool reinit_head = true;
  /// Per-component z-scoring of subjects before windowing.
  bool zscore = true;
  /// Worker threads. Results do not depend on this value.
  std::size_t jobs = 1;

  void validate() const;
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  std::uint64_t step = 0;

  static AdamState for_params(const ModelParams& params);
};

/// Bias-corrected Adam, applied in parameter-name order.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_auc = 0.0;
};

struct FoldResult {
  std::size_t fold = 0;
  double best_val_auc = 0.0;
  double test_auc = 0.0;
  std::size_t epochs_to_best = 0;
  std::size_t epochs_run = 0;
  std::vector<EpochRecord> history;
};

/// Mean loss and summed (not averaged) gradients over `samples`. The sum is
/// taken over a fixed number of contiguous lanes in a fixed order, so the
/// result is identical for any thread count.
struct BatchGradients {
  double loss_sum = 0.0;
  Gradients grads;
};
BatchGradients batch_gradients(const ModelParams& params, const std::vector<const WindowedSample*>& samples,
                               const ModelConfig& config, std::size_t jobs);

/// Positive-class probabilities (class 1) for each sample.
ScoredSet score_samples(const ModelParams& params, const std::vector<WindowedSample>& samples,
                        const ModelConfig& config, std::size_t jobs);

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainingRun {
  ModelParams best_params;
  FoldResult result;  // test_auc unset
};

/// Mini-batch Adam on cross-entropy, early-stopped on validation AUC. The
/// returned parameters come from the best validation epoch.
TrainingRun train_classifier(ModelParams initial, const std::vector<WindowedSample>& train,
                             const std::vector<WindowedSample>& val, const TrainConfig& config,
                             const ModelConfig& model_config, const EpochCallback& on_epoch = {});

struct PretrainResult {
  Checkpoint checkpoint;
  FoldResult result;
};

/// Trains the network to tell forward from reversed time. Subjects in
/// `train` and `val` must be disjoint.
PretrainResult pretrain(const std::vector<PretextSample>& train, const std::vector<PretextSample>& val,
                        const TrainConfig& config, const ModelConfig& model_config,
                        const EpochCallback& on_epoch = {});

struct PretextRun {
  PretrainResult pretrain;  // result.test_auc holds the held-out pretext AUC
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::size_t test_samples = 0;
};

/// Subject-level split of `dataset` (a subject's forward and reversed
/// samples share a partition), optional z-scoring, pretext construction and
/// pretraining. Test AUC is measured when spec.test_size > 0.
PretextRun pretrain_dataset(const Dataset& dataset, const SplitSpec& spec, const TrainConfig& config,
                            const ModelConfig& model_config, const EpochCallback& on_epoch = {});

struct FinetuneResult {
  FoldResult result;
  Checkpoint checkpoint;
};

/// Downstream training on class labels. Starts from `init` (or from
/// config.init_from when `init` is null and a path is set), otherwise from
/// scratch. All layers stay trainable; test AUC is taken at the best
/// validation epoch.
FinetuneResult finetune(const Dataset& train, const Dataset& val, const Dataset& test,
                        const TrainConfig& config, const ModelConfig& model_config,
                        const Checkpoint* init = nullptr, const EpochCallback& on_epoch = {});

/// Initial parameters for a downstream run (checkpoint load + optional head
/// reinitialization, or scratch).
ModelParams initial_params(const TrainConfig& config, const ModelConfig& model_config,
                           const Checkpoint* init);

/// Shuffles [0, n) and deals indices round-robin into k disjoint folds.
std::vector<std::vector<std::size_t>> kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed);

/// k-fold over an existing split: the training pool is divided into k folds
/// (seeded by `fold_seed`) and each run trains on k−1 of them against the
/// shared val/test holdouts.
std::vector<FinetuneResult> kfold_on_split(const DatasetSplit& split, std::size_t k, std::uint64_t fold_seed,
                                           const TrainConfig& config, const ModelConfig& model_config,
                                           const Checkpoint* init = nullptr);

/// Fixed val/test holdouts from `spec`; the remaining pool is split into k
/// folds and each run trains on k−1 of them. All runs share the holdouts.
std::vector<FoldResult> kfold_run(const Dataset& dataset, std::size_t k, const SplitSpec& spec,
                                  const TrainConfig& config, const ModelConfig& model_config,
                                  const Checkpoint* init = nullptr);

struct SweepArm {
  Arm arm = Arm::kScratch;
  const Checkpoint* checkpoint = nullptr;  // required for Arm::kPretrained
};

struct SweepRun {
  std::size_t subjects_per_class = 0;
  Arm arm = Arm::kScratch;
  std::size_t repeat = 0;
  FoldResult result;
};

struct SweepResult {
  std::size_t pool_size = 0;
  std::size_t val_size = 0;
  std::size_t test_size = 0;
  std::vector<SweepRun> runs;  // size-major, then arm, then repeat
};

/// Training subsets for repeat r are nested across sizes: the subset drawn
/// at a smaller size is contained in the one at a larger size.
Dataset sweep_subset(const Dataset& pool, std::size_t subjects_per_class, std::uint64_t seed,
                     std::size_t repeat);

SweepResult sweep_subjects_per_class(const Dataset& dataset, const std::vector<std::size_t>& sizes,
                                     const std::vector<SweepArm>& arms, std::size_t repeats,
                                     const SplitSpec& spec, const TrainConfig& config,
                                     const ModelConfig& model_config);

/// Smallest class count in `dataset` (the largest feasible subjects-per-class).
std::size_t max_per_class(const Dataset& dataset);

}  // namespace tdir
