#include "tdir/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <type_traits>

#include "tdir/rng.hpp"

namespace tdir {

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::size_t parse_size(const std::string& key, std::string_view s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("model config: bad integer for " + key + ": '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto pos = std::min(s.find(',', start), s.size());
    out.push_back(parse_size(key, std::string_view(s).substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

std::string conv_name(std::size_t layer) { return "conv" + std::to_string(layer + 1); }

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (components == 0 || window_len == 0) fail("components and window_len must be positive");
  if (conv_channels.empty()) fail("at least one convolution layer is required");
  if (conv_channels.size() != conv_kernels.size()) fail("conv_channels and conv_kernels differ in length");
  std::size_t len = window_len;
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) {
    if (conv_channels[i] == 0 || conv_kernels[i] == 0) fail("conv widths and kernels must be positive");
    if (len < conv_kernels[i]) {
      fail("window_len " + std::to_string(window_len) + " too short for the convolution stack");
    }
    len = len - conv_kernels[i] + 1;
  }
  if (encoder_dim == 0 || lstm_hidden == 0 || attention_dim == 0 || head_hidden == 0) {
    fail("layer widths must be positive");
  }
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) fail("leaky_slope must lie in (0, 1)");
}

std::size_t ModelConfig::conv_output_len() const {
  std::size_t len = window_len;
  for (auto k : conv_kernels) len = len - k + 1;
  return len;
}

std::string ModelConfig::to_text() const {
  char slope[32];
  auto res = std::to_chars(slope, slope + sizeof slope, leaky_slope);
  std::ostringstream out;
  out << "components=" << components << "\n"
      << "window_len=" << window_len << "\n"
      << "conv_channels=" << join(conv_channels) << "\n"
      << "conv_kernels=" << join(conv_kernels) << "\n"
      << "encoder_dim=" << encoder_dim << "\n"
      << "lstm_hidden=" << lstm_hidden << "\n"
      << "attention_dim=" << attention_dim << "\n"
      << "head_hidden=" << head_hidden << "\n"
      << "n_classes=" << n_classes << "\n"
      << "leaky_slope=" << std::string_view(slope, static_cast<std::size_t>(res.ptr - slope)) << "\n";
  return out.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t seen = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("model config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    ++seen;
    if (key == "components") c.components = parse_size(key, val);
    else if (key == "window_len") c.window_len = parse_size(key, val);
    else if (key == "conv_channels") c.conv_channels = parse_list(key, val);
    else if (key == "conv_kernels") c.conv_kernels = parse_list(key, val);
    else if (key == "encoder_dim") c.encoder_dim = parse_size(key, val);
    else if (key == "lstm_hidden") c.lstm_hidden = parse_size(key, val);
    else if (key == "attention_dim") c.attention_dim = parse_size(key, val);
    else if (key == "head_hidden") c.head_hidden = parse_size(key, val);
    else if (key == "n_classes") c.n_classes = parse_size(key, val);
    else if (key == "leaky_slope") {
      auto res = std::from_chars(val.data(), val.data() + val.size(), c.leaky_slope);
      if (res.ec != std::errc()) throw std::invalid_argument("model config: bad leaky_slope");
    } else {
      throw std::invalid_argument("model config: unknown key '" + key + "'");
    }
  }
  if (seen != 10) throw std::invalid_argument("model config: expected 10 keys, got " + std::to_string(seen));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

std::map<std::string, Shape> param_shapes(const ModelConfig& config) {
  config.validate();
  std::map<std::string, Shape> shapes;
  std::size_t in_ch = config.components;
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    shapes[conv_name(i) + ".weight"] = {config.conv_channels[i], in_ch, config.conv_kernels[i]};
    shapes[conv_name(i) + ".bias"] = {config.conv_channels[i]};
    in_ch = config.conv_channels[i];
  }
  const std::size_t flat = in_ch * config.conv_output_len();
  shapes["encoder.weight"] = {config.encoder_dim, flat};
  shapes["encoder.bias"] = {config.encoder_dim};
  const std::size_t h = config.lstm_hidden;
  for (const char* dir : {"lstm.fwd", "lstm.bwd"}) {
    shapes[std::string(dir) + ".w_ih"] = {4 * h, config.encoder_dim};
    shapes[std::string(dir) + ".w_hh"] = {4 * h, h};
    shapes[std::string(dir) + ".bias"] = {4 * h};
  }
  shapes["attention.w"] = {config.attention_dim, 2 * h};
  shapes["attention.v"] = {config.attention_dim};
  shapes["head.hidden.weight"] = {config.head_hidden, 2 * h};
  shapes["head.hidden.bias"] = {config.head_hidden};
  shapes["head.out.weight"] = {config.n_classes, config.head_hidden};
  shapes["head.out.bias"] = {config.n_classes};
  return shapes;
}

std::size_t param_count(const ModelConfig& config) {
  config.validate();
  const std::size_t h = config.lstm_hidden;
  std::size_t total = 0;
  std::size_t in_ch = config.components;
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    total += config.conv_channels[i] * in_ch * config.conv_kernels[i] + config.conv_channels[i];
    in_ch = config.conv_channels[i];
  }
  total += config.encoder_dim * (in_ch * config.conv_output_len()) + config.encoder_dim;
  total += 2 * 4 * (h * (config.encoder_dim + h) + h);
  total += config.attention_dim * 2 * h + config.attention_dim;
  total += config.head_hidden * 2 * h + config.head_hidden;
  total += config.n_classes * config.head_hidden + config.n_classes;
  return total;
}

namespace {

bool is_bias(const std::string& name) {
  return name.ends_with(".bias");
}

// (fan_in, fan_out) for Xavier scaling.
std::pair<double, double> fans(const Shape& dims) {
  if (dims.size() == 3) return {double(dims[1] * dims[2]), double(dims[0] * dims[2])};
  if (dims.size() == 2) return {double(dims[1]), double(dims[0])};
  return {double(dims[0]), 1.0};  // attention.v acts as a [1×A] map
}

void fill_tensor(Tensor<float>& t, const std::string& name, std::uint64_t seed) {
  if (is_bias(name)) {
    std::fill(t.values.begin(), t.values.end(), 0.0f);
    if (name.starts_with("lstm.")) {
      // Gate order i, f, g, o; forget gate starts open.
      const std::size_t h = t.size() / 4;
      std::fill(t.values.begin() + static_cast<std::ptrdiff_t>(h),
                t.values.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0f);
    }
    return;
  }
  const auto [fan_in, fan_out] = fans(t.dims);
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Rng rng(derive_seed(seed, {hash_name(name)}));
  for (auto& v : t.values) v = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params;
  for (const auto& [name, dims] : param_shapes(config)) {
    Tensor<float> t(dims);
    fill_tensor(t, name, seed);
    params.emplace(name, std::move(t));
  }
  return params;
}

void init_tensor(ModelParams& params, const std::string& name, std::uint64_t seed) {
  fill_tensor(params.at(name), name, seed);
}

// ---------------------------------------------------------------------------

template <typename T>
BoundParams bind_params(Tape<T>& tape, const ParamMap<T>& params, GradMap<T>& grads) {
  BoundParams out;
  for (const auto& [name, t] : params) {
    auto& sink = grads.at(name);
    if (sink.size() != t.values.size()) {
      throw ShapeError("gradient buffer for " + name + " has the wrong size");
    }
    out[name] = tape.param(t, &sink);
  }
  return out;
}

template <typename T>
BoundParams bind_params(Tape<T>& tape, ParamMap<T>& params) {
  BoundParams out;
  for (auto& [name, t] : params) out[name] = tape.param(t);
  return out;
}

template <typename T>
BoundParams bind_constants(Tape<T>& tape, const ParamMap<T>& params) {
  BoundParams out;
  for (const auto& [name, t] : params) out[name] = tape.constant_ref(t);
  return out;
}

namespace {

void check_window(const Shape& dims, const ModelConfig& config) {
  if (dims.size() != 2 || dims[0] != config.components || dims[1] != config.window_len) {
    throw ShapeError("encoder: window " + shape_str(dims) + " does not match " +
                     shape_str({config.components, config.window_len}));
  }
}

// Conv stack output flattened to one row [1×(C_last·L_last)].
template <typename T>
Var conv_features(Tape<T>& tape, const BoundParams& p, Var window, const ModelConfig& config) {
  check_window(tape.value(window).dims, config);
  Var x = window;
  for (std::size_t i = 0; i < config.conv_channels.size(); ++i) {
    const std::string n = conv_name(i);
    x = tape.leaky_relu(tape.conv1d(x, p.at(n + ".weight"), p.at(n + ".bias")), config.leaky_slope);
  }
  return tape.reshape(x, {1, tape.value(x).size()});
}

template <typename T>
Var encoder_dense(Tape<T>& tape, const BoundParams& p, Var features, const ModelConfig& config) {
  return tape.leaky_relu(tape.linear(features, p.at("encoder.weight"), p.at("encoder.bias")),
                         config.leaky_slope);
}

}  // namespace

template <typename T>
Var encoder_forward(Tape<T>& tape, const BoundParams& p, Var window, const ModelConfig& config) {
  const Var features = conv_features(tape, p, window, config);
  return tape.reshape(encoder_dense(tape, p, features, config), {config.encoder_dim});
}

namespace {

template <typename T>
std::vector<Var> lstm_direction(Tape<T>& tape, const BoundParams& p, const std::string& prefix,
                                Var latents, std::size_t steps, bool reverse, std::size_t h) {
  const Var inputs = tape.linear(latents, p.at(prefix + ".w_ih"), p.at(prefix + ".bias"));
  std::vector<Var> outputs(steps);
  Var hidden, cell;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    Var gates = tape.row(inputs, t);
    // Zero initial state: the recurrent term and f·c vanish at the first step.
    if (k > 0) gates = tape.add(gates, tape.linear(hidden, p.at(prefix + ".w_hh")));
    const Var i = tape.sigmoid(tape.slice(gates, 0, h));
    const Var f = tape.sigmoid(tape.slice(gates, h, h));
    const Var g = tape.tanh(tape.slice(gates, 2 * h, h));
    const Var o = tape.sigmoid(tape.slice(gates, 3 * h, h));
    cell = k > 0 ? tape.add(tape.mul(f, cell), tape.mul(i, g)) : tape.mul(i, g);
    hidden = tape.mul(o, tape.tanh(cell));
    outputs[t] = hidden;
  }
  return outputs;
}

}  // namespace

template <typename T>
Var bilstm_forward(Tape<T>& tape, const BoundParams& p, Var latents, const ModelConfig& config) {
  const auto& z = tape.value(latents);
  if (z.rank() != 2 || z.dims[1] != config.encoder_dim || z.dims[0] == 0) {
    throw ShapeError("bilstm: latents " + shape_str(z.dims) + " must be [T_w x " +
                     std::to_string(config.encoder_dim) + "]");
  }
  const std::size_t steps = z.dims[0];
  const std::size_t h = config.lstm_hidden;
  const auto fwd = lstm_direction(tape, p, "lstm.fwd", latents, steps, false, h);
  const auto bwd = lstm_direction(tape, p, "lstm.bwd", latents, steps, true, h);
  std::vector<Var> rows;
  rows.reserve(2 * steps);
  for (std::size_t t = 0; t < steps; ++t) {
    rows.push_back(fwd[t]);
    rows.push_back(bwd[t]);
  }
  return tape.reshape(tape.concat(rows), {steps, 2 * h});
}

template <typename T>
AttentionOutput attention_forward(Tape<T>& tape, const BoundParams& p, Var hidden,
                                  const ModelConfig& config) {
  const auto& hv = tape.value(hidden);
  if (hv.rank() != 2 || hv.dims[1] != 2 * config.lstm_hidden) {
    throw ShapeError("attention: hidden states " + shape_str(hv.dims) + " have the wrong width");
  }
  const std::size_t steps = hv.dims[0];
  const Var keys = tape.tanh(tape.linear(hidden, p.at("attention.w")));
  const Var v = tape.reshape(p.at("attention.v"), {1, config.attention_dim});
  const Var scores = tape.reshape(tape.linear(keys, v), {steps});
  const Var weights = tape.softmax(scores);
  const Var context = tape.matmul(tape.reshape(weights, {1, steps}), hidden);
  return {tape.reshape(context, {2 * config.lstm_hidden}), weights};
}

template <typename T>
ClassifierOutput classifier_forward(Tape<T>& tape, const BoundParams& p, Var context,
                                    const ModelConfig& config) {
  if (tape.value(context).size() != 2 * config.lstm_hidden) {
    throw ShapeError("classifier: context vector has the wrong size");
  }
  const Var hid = tape.leaky_relu(
      tape.linear(context, p.at("head.hidden.weight"), p.at("head.hidden.bias")), config.leaky_slope);
  const Var logits = tape.linear(hid, p.at("head.out.weight"), p.at("head.out.bias"));
  return {logits, tape.softmax(logits)};
}

template <typename T>
ForwardOutput model_forward(Tape<T>& tape, const BoundParams& p, const WindowedSample& sample,
                            const ModelConfig& config) {
  if (sample.windows.empty()) throw ShapeError("model: sample " + sample.subject_id + " has no windows");
  // All windows go through the dense projection as one matrix, so its
  // weights are streamed once per sample instead of once per window.
  std::vector<Var> features;
  features.reserve(sample.windows.size());
  for (const auto& w : sample.windows) {
    Var in;
    if constexpr (std::is_same_v<T, float>) {
      in = tape.constant_ref(w);
    } else {
      in = tape.constant(w.template cast<T>());
    }
    features.push_back(conv_features(tape, p, in, config));
  }
  ForwardOutput out;
  out.latents = encoder_dense(tape, p, tape.concat(features), config);
  out.hidden = bilstm_forward(tape, p, out.latents, config);
  out.attention = attention_forward(tape, p, out.hidden, config);
  out.classifier = classifier_forward(tape, p, out.attention.context, config);
  return out;
}

std::vector<float> predict(const ModelParams& params, const WindowedSample& sample,
                           const ModelConfig& config) {
  Tape<float> tape;
  const auto bound = bind_constants(tape, params);
  const auto out = model_forward(tape, bound, sample, config);
  return tape.value(out.classifier.probs).values;
}

#define TDIR_INSTANTIATE_MODEL(T)                                                                  \
  template BoundParams bind_params<T>(Tape<T>&, const ParamMap<T>&, GradMap<T>&);                  \
  template BoundParams bind_params<T>(Tape<T>&, ParamMap<T>&);                                    \
  template BoundParams bind_constants<T>(Tape<T>&, const ParamMap<T>&);                           \
  template Var encoder_forward<T>(Tape<T>&, const BoundParams&, Var, const ModelConfig&);         \
  template Var bilstm_forward<T>(Tape<T>&, const BoundParams&, Var, const ModelConfig&);          \
  template AttentionOutput attention_forward<T>(Tape<T>&, const BoundParams&, Var,                \
                                                const ModelConfig&);                              \
  template ClassifierOutput classifier_forward<T>(Tape<T>&, const BoundParams&, Var,              \
                                                  const ModelConfig&);                            \
  template ForwardOutput model_forward<T>(Tape<T>&, const BoundParams&, const WindowedSample&,    \
                                          const ModelConfig&);

TDIR_INSTANTIATE_MODEL(float)
TDIR_INSTANTIATE_MODEL(double)

#undef TDIR_INSTANTIATE_MODEL

}  // namespace tdir
