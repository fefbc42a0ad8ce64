#include "tdir/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tdir/model.hpp"
#include "tdir/rng.hpp"

namespace tdir {

namespace {

double evaluate(const LossBuilder& forward_fn, DoubleParams& params, bool with_grad) {
  Tape<double> tape;
  BoundVars vars;
  for (auto& [name, tensor] : params) {
    vars[name] = with_grad ? tape.param(tensor) : tape.constant_ref(tensor);
  }
  const Var loss = forward_fn(tape, vars);
  if (with_grad) tape.backward(loss);
  return tape.value(loss).values.at(0);
}

}  // namespace

GradCheckResult finite_difference_check(const LossBuilder& forward_fn, DoubleParams& params,
                                        const GradCheckOptions& options) {
  for (auto& [name, tensor] : params) tensor.zero_grad();
  evaluate(forward_fn, params, true);

  GradCheckResult result;
  Rng rng(options.seed);
  for (auto& [name, tensor] : params) {
    std::vector<std::size_t> indices(tensor.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (indices.size() > options.samples_per_tensor) {
      rng.shuffle(std::span<std::size_t>(indices));
      indices.resize(options.samples_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t idx : indices) {
      const double original = tensor.values[idx];
      tensor.values[idx] = original + options.eps;
      const double up = evaluate(forward_fn, params, false);
      tensor.values[idx] = original - options.eps;
      const double down = evaluate(forward_fn, params, false);
      tensor.values[idx] = original;

      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = tensor.grad[idx] + options.analytic_offset;
      const double err =
          std::abs(analytic - numeric) / std::max(options.denominator_floor, std::abs(analytic) + std::abs(numeric));
      ++result.checked;
      if (result.worst_param.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = name;
        result.worst_index = idx;
      }
    }
  }
  return result;
}

namespace {

Tensor<double> random_tensor(Shape dims, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(dims));
  for (auto& v : t.values) v = scale * rng.normal();
  return t;
}

// Keeps points clear of the leaky ReLU kink so central differences stay on one side.
void avoid_kink(Tensor<double>& t, double margin) {
  for (auto& v : t.values) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
}

// Scalar reduction with random weights so every output element gets a distinct cotangent.
Var weighted_sum(Tape<double>& tape, Var y, const Tensor<double>& w) {
  return tape.sum(tape.mul(y, tape.constant_ref(w)));
}

struct Case {
  DoubleParams params;
  LossBuilder loss;
};

Case primitive_case(const std::string& op, Rng& rng) {
  Case c;
  auto& p = c.params;
  auto weights = [&](Shape dims) { return random_tensor(std::move(dims), rng); };
  if (op == "matmul") {
    p["a"] = random_tensor({4, 3}, rng);
    p["b"] = random_tensor({3, 5}, rng);
    const auto w = weights({4, 5});
    c.loss = [w](Tape<double>& t, const BoundVars& v) { return weighted_sum(t, t.matmul(v.at("a"), v.at("b")), w); };
  } else if (op == "linear") {
    p["x"] = random_tensor({3, 6}, rng);
    p["w"] = random_tensor({4, 6}, rng);
    p["b"] = random_tensor({4}, rng);
    const auto w = weights({3, 4});
    c.loss = [w](Tape<double>& t, const BoundVars& v) {
      return weighted_sum(t, t.linear(v.at("x"), v.at("w"), v.at("b")), w);
    };
  } else if (op == "conv1d" || op == "conv1d_stride2") {
    const std::size_t stride = op == "conv1d" ? 1 : 2;
    p["x"] = random_tensor({3, 9}, rng);
    p["w"] = random_tensor({4, 3, 3}, rng);
    p["b"] = random_tensor({4}, rng);
    const auto w = weights({4, (9 - 3) / stride + 1});
    c.loss = [w, stride](Tape<double>& t, const BoundVars& v) {
      return weighted_sum(t, t.conv1d(v.at("x"), v.at("w"), v.at("b"), stride), w);
    };
  } else if (op == "leaky_relu") {
    p["x"] = random_tensor({12}, rng);
    avoid_kink(p["x"], 1e-2);
    const auto w = weights({12});
    c.loss = [w](Tape<double>& t, const BoundVars& v) { return weighted_sum(t, t.leaky_relu(v.at("x"), 0.01), w); };
  } else if (op == "sigmoid" || op == "tanh") {
    p["x"] = random_tensor({12}, rng, 2.0);
    const auto w = weights({12});
    const bool sig = op == "sigmoid";
    c.loss = [w, sig](Tape<double>& t, const BoundVars& v) {
      return weighted_sum(t, sig ? t.sigmoid(v.at("x")) : t.tanh(v.at("x")), w);
    };
  } else if (op == "add" || op == "mul") {
    p["a"] = random_tensor({2, 5}, rng);
    p["b"] = random_tensor({2, 5}, rng);
    const auto w = weights({2, 5});
    const bool is_add = op == "add";
    c.loss = [w, is_add](Tape<double>& t, const BoundVars& v) {
      return weighted_sum(t, is_add ? t.add(v.at("a"), v.at("b")) : t.mul(v.at("a"), v.at("b")), w);
    };
  } else if (op == "concat") {
    p["a"] = random_tensor({2, 3}, rng);
    p["b"] = random_tensor({1, 3}, rng);
    const auto w = weights({5, 3});
    c.loss = [w](Tape<double>& t, const BoundVars& v) {
      const Var parts[] = {v.at("a"), v.at("b"), v.at("a")};
      return weighted_sum(t, t.concat(parts), w);
    };
  } else if (op == "slice" || op == "reshape" || op == "row") {
    p["x"] = random_tensor({3, 4}, rng);
    const auto w = weights({op == "reshape" ? std::size_t{12} : std::size_t{4}});
    const std::string kind = op;
    c.loss = [w, kind](Tape<double>& t, const BoundVars& v) {
      const Var x = v.at("x");
      const Var y = kind == "slice" ? t.slice(x, 5, 4) : kind == "row" ? t.row(x, 1) : t.reshape(x, {12});
      return weighted_sum(t, y, w);
    };
  } else if (op == "softmax") {
    p["x"] = random_tensor({5}, rng);
    const auto w = weights({5});
    c.loss = [w](Tape<double>& t, const BoundVars& v) { return weighted_sum(t, t.softmax(v.at("x")), w); };
  } else if (op == "cross_entropy") {
    // Probabilities from a sigmoid take the generic −1/p path.
    p["x"] = random_tensor({4}, rng);
    const std::size_t cls = rng.below(4);
    c.loss = [cls](Tape<double>& t, const BoundVars& v) { return t.cross_entropy(t.sigmoid(v.at("x")), cls); };
  } else if (op == "softmax_cross_entropy") {
    p["x"] = random_tensor({4}, rng);
    const std::size_t cls = rng.below(4);
    c.loss = [cls](Tape<double>& t, const BoundVars& v) { return t.cross_entropy(t.softmax(v.at("x")), cls); };
  } else if (op == "sum") {
    p["x"] = random_tensor({2, 3}, rng);
    c.loss = [](Tape<double>& t, const BoundVars& v) { return t.sum(v.at("x")); };
  } else {
    throw std::invalid_argument("gradcheck: unknown op " + op);
  }
  return c;
}

ModelConfig reduced_model_config() {
  ModelConfig c;
  c.components = 4;
  c.window_len = 8;
  c.conv_channels = {3, 3, 3};
  c.conv_kernels = {2, 2, 2};
  c.encoder_dim = 5;
  c.lstm_hidden = 5;
  c.attention_dim = 5;
  c.head_hidden = 5;
  return c;
}

void merge(OpCheck& into, const GradCheckResult& r) {
  if (into.points == 0 || r.max_rel_error > into.result.max_rel_error) {
    into.result.max_rel_error = r.max_rel_error;
    into.result.worst_param = r.worst_param;
    into.result.worst_index = r.worst_index;
  }
  into.result.checked += r.checked;
  into.points += 1;
}

}  // namespace

std::vector<std::string> gradcheck_suite_ops() {
  return {"matmul", "linear", "conv1d", "conv1d_stride2", "leaky_relu", "sigmoid", "tanh", "add",
          "mul", "concat", "slice", "reshape", "row", "softmax", "cross_entropy",
          "softmax_cross_entropy", "sum", "model"};
}

std::vector<OpCheck> run_gradcheck_suite(const SuiteOptions& options) {
  std::vector<OpCheck> out;
  for (const auto& op : gradcheck_suite_ops()) {
    OpCheck check;
    check.op = op;
    Rng rng(derive_seed(options.seed, {hash_name(op)}));
    GradCheckOptions fd;
    fd.eps = op == "model" ? options.model_eps : options.eps;
    fd.samples_per_tensor = 64;
    fd.analytic_offset = op == options.corrupt_op ? options.corrupt_offset : 0.0;
    if (op == "model") {
      const ModelConfig cfg = reduced_model_config();
      const std::size_t points = std::max<std::size_t>(1, options.points / 25);
      fd.samples_per_tensor = 10;
      for (std::size_t i = 0; i < points; ++i) {
        auto params = cast_params<double>(init_params(cfg, rng.next_u64()));
        // Random biases too, so no unit sits exactly on a ReLU kink.
        for (auto& [name, t] : params) {
          for (auto& v : t.values) v += 0.2 * rng.normal();
        }
        WindowedSample sample;
        sample.label = static_cast<int>(rng.below(2));
        for (std::size_t w = 0; w < 3; ++w) {
          Tensor<float> win({cfg.components, cfg.window_len});
          for (auto& v : win.values) v = static_cast<float>(rng.normal());
          sample.windows.push_back(std::move(win));
        }
        fd.seed = rng.next_u64();
        merge(check, finite_difference_check(
                         [&](Tape<double>& tape, const BoundVars& vars) {
                           const auto fwd = model_forward(tape, vars, sample, cfg);
                           return tape.cross_entropy(fwd.classifier.probs,
                                                     static_cast<std::size_t>(sample.label));
                         },
                         params, fd));
      }
    } else {
      for (std::size_t i = 0; i < options.points; ++i) {
        Case c = primitive_case(op, rng);
        fd.seed = rng.next_u64();
        merge(check, finite_difference_check(c.loss, c.params, fd));
      }
    }
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace tdir
