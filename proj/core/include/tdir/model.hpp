#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tdir/data.hpp"
#include "tdir/tape.hpp"
#include "tdir/tensor.hpp"

namespace tdir {

/// Architecture hyperparameters. Defaults follow the published network:
/// three valid 1D convolutions (64/128/200 channels, kernels 4/4/3), a
/// 256-unit per-window projection, a 200-unit biLSTM, additive attention and
/// a two-layer softmax head.
struct ModelConfig {
  std::size_t components = 53;
  std::size_t window_len = 20;
  std::vector<std::size_t> conv_channels = {64, 128, 200};
  std::vector<std::size_t> conv_kernels = {4, 4, 3};
  std::size_t encoder_dim = 256;
  std::size_t lstm_hidden = 200;
  std::size_t attention_dim = 128;
  std::size_t head_hidden = 200;
  std::size_t n_classes = 2;
  double leaky_slope = 0.01;

  /// Throws std::invalid_argument on an unusable configuration.
  void validate() const;
  /// Time length left after the convolution stack (12 for the defaults).
  std::size_t conv_output_len() const;

  /// Canonical `key=value` lines, fixed key order; parse() inverts it.
  std::string to_text() const;
  static ModelConfig parse(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;
using ModelParams = ParamMap<float>;
using BoundParams = std::map<std::string, Var>;
/// Gradient buffers keyed by parameter name.
template <typename T>
using GradMap = std::map<std::string, std::vector<T>>;
using Gradients = GradMap<float>;

/// Zero-filled gradient buffers matching `params`.
template <typename T>
GradMap<T> zero_gradients(const ParamMap<T>& params) {
  GradMap<T> out;
  for (const auto& [name, t] : params) out.emplace(name, std::vector<T>(t.size(), T(0)));
  return out;
}

/// Parameter names and shapes implied by a config, in canonical order.
std::map<std::string, Shape> param_shapes(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

/// Xavier-uniform weights, zero biases, LSTM forget-gate bias 1. Each tensor
/// draws from its own stream derived from (seed, name).
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
/// Re-draws one tensor the way init_params would under `seed`.
void init_tensor(ModelParams& params, const std::string& name, std::uint64_t seed);

/// Names of the final output layer, replaced when fine-tuning with a fresh head.
inline const std::vector<std::string>& head_output_names() {
  static const std::vector<std::string> names = {"head.out.bias", "head.out.weight"};
  return names;
}

template <typename T>
ParamMap<T> cast_params(const ModelParams& params) {
  ParamMap<T> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<T>());
  return out;
}

// ---------------------------------------------------------------------------
// Forward graph pieces. Each records onto the caller's tape.

/// Registers every parameter as a differentiable leaf whose gradient is
/// accumulated into the matching buffer of `grads`.
template <typename T>
BoundParams bind_params(Tape<T>& tape, const ParamMap<T>& params, GradMap<T>& grads);
/// Registers every parameter in place (gradients land in each tensor's grad).
template <typename T>
BoundParams bind_params(Tape<T>& tape, ParamMap<T>& params);
/// Registers parameters as constants (inference only).
template <typename T>
BoundParams bind_constants(Tape<T>& tape, const ParamMap<T>& params);

/// Conv stack → flatten → dense(encoder_dim) → leaky ReLU. window: [C×L].
template <typename T>
Var encoder_forward(Tape<T>& tape, const BoundParams& p, Var window, const ModelConfig& config);

/// latents [T_w×E] → [T_w×2H], each row [forward h_t ; backward h_t].
template <typename T>
Var bilstm_forward(Tape<T>& tape, const BoundParams& p, Var latents, const ModelConfig& config);

struct AttentionOutput {
  Var context;  // [2H]
  Var weights;  // [T_w], softmax over time
};
template <typename T>
AttentionOutput attention_forward(Tape<T>& tape, const BoundParams& p, Var hidden,
                                  const ModelConfig& config);

struct ClassifierOutput {
  Var logits;
  Var probs;
};
template <typename T>
ClassifierOutput classifier_forward(Tape<T>& tape, const BoundParams& p, Var context,
                                    const ModelConfig& config);

struct ForwardOutput {
  Var latents;
  Var hidden;
  AttentionOutput attention;
  ClassifierOutput classifier;
};
template <typename T>
ForwardOutput model_forward(Tape<T>& tape, const BoundParams& p, const WindowedSample& sample,
                            const ModelConfig& config);

/// Class probabilities for one sample, no gradient bookkeeping.
std::vector<float> predict(const ModelParams& params, const WindowedSample& sample,
                           const ModelConfig& config);

}  // namespace tdir
