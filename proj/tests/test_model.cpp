#include <gtest/gtest.h>

#include <cmath>

#include "tdir/gradcheck.hpp"
#include "tdir/model.hpp"
#include "tdir/rng.hpp"

namespace tdir {
namespace {

ModelConfig tiny_config() {
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

WindowedSample random_sample(const ModelConfig& c, std::size_t windows, std::uint64_t seed, int label = 0) {
  Rng rng(seed);
  WindowedSample s;
  s.subject_id = "s" + std::to_string(seed);
  s.label = label;
  for (std::size_t w = 0; w < windows; ++w) {
    Tensor<float> t({c.components, c.window_len});
    for (auto& v : t.values) v = static_cast<float>(rng.normal());
    s.windows.push_back(std::move(t));
  }
  return s;
}

TEST(ModelConfig, DefaultConvOutputLength) {
  EXPECT_EQ(ModelConfig{}.conv_output_len(), 12u);
}

TEST(ModelConfig, TextRoundTrip) {
  ModelConfig c = tiny_config();
  c.leaky_slope = 0.02;
  EXPECT_EQ(ModelConfig::parse(c.to_text()), c);
  EXPECT_EQ(ModelConfig::parse(ModelConfig{}.to_text()), ModelConfig{});
}

TEST(ModelConfig, RejectsUnusableConfigs) {
  ModelConfig c;
  c.window_len = 8;  // shorter than the 4+4+3 receptive field
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.conv_kernels = {4, 4};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(ModelConfig::parse("components=3\n"), std::invalid_argument);
}

TEST(Params, DefaultLayerCounts) {
  const auto shapes = param_shapes(ModelConfig{});
  EXPECT_EQ(shape_size(shapes.at("conv1.weight")) + shape_size(shapes.at("conv1.bias")), 13632u);
  std::size_t lstm_fwd = 0, lstm_all = 0;
  for (const auto& [name, dims] : shapes) {
    if (name.starts_with("lstm.fwd")) lstm_fwd += shape_size(dims);
    if (name.starts_with("lstm.")) lstm_all += shape_size(dims);
  }
  EXPECT_EQ(lstm_fwd, 365600u);
  EXPECT_EQ(lstm_all, 731200u);
  EXPECT_EQ(shapes.at("encoder.weight"), (Shape{256, 2400}));
}

TEST(Params, CountMatchesRealizedTensors) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c;
    c.components = 1 + rng.below(10);
    const std::size_t layers = 1 + rng.below(3);
    c.conv_channels.clear();
    c.conv_kernels.clear();
    std::size_t reach = 0;
    for (std::size_t i = 0; i < layers; ++i) {
      c.conv_channels.push_back(1 + rng.below(6));
      c.conv_kernels.push_back(1 + rng.below(4));
      reach += c.conv_kernels.back() - 1;
    }
    c.window_len = reach + 1 + rng.below(6);
    c.encoder_dim = 1 + rng.below(8);
    c.lstm_hidden = 1 + rng.below(8);
    c.attention_dim = 1 + rng.below(8);
    c.head_hidden = 1 + rng.below(8);
    std::size_t realized = 0;
    for (const auto& [name, t] : init_params(c, 3)) realized += t.size();
    EXPECT_EQ(param_count(c), realized);
  }
}

TEST(Params, InitConventions) {
  const ModelConfig c;
  const auto p = init_params(c, 42);
  for (const auto& [name, t] : p) {
    if (name.ends_with(".bias")) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const bool forget = name.starts_with("lstm.") && i >= c.lstm_hidden && i < 2 * c.lstm_hidden;
        EXPECT_EQ(t.values[i], forget ? 1.0f : 0.0f) << name << "[" << i << "]";
      }
    }
  }
  const auto& w = p.at("conv1.weight");
  const double bound = std::sqrt(6.0 / (53.0 * 4 + 64.0 * 4));
  for (float v : w.values) EXPECT_LE(std::abs(v), bound);
  EXPECT_EQ(init_params(c, 42).at("encoder.weight").values, p.at("encoder.weight").values);
  EXPECT_NE(init_params(c, 43).at("encoder.weight").values, p.at("encoder.weight").values);
}

TEST(Params, InitTensorRedrawsOneTensor) {
  const ModelConfig c = tiny_config();
  auto p = init_params(c, 1);
  const auto before = p;
  init_tensor(p, "head.out.weight", 99);
  EXPECT_NE(p.at("head.out.weight").values, before.at("head.out.weight").values);
  EXPECT_EQ(p.at("head.out.weight").values, init_params(c, 99).at("head.out.weight").values);
  EXPECT_EQ(p.at("conv1.weight").values, before.at("conv1.weight").values);
}

TEST(Model, ForwardShapes) {
  const ModelConfig c;
  const auto params = init_params(c, 5);
  const auto sample = random_sample(c, 7, 1);
  Tape<float> tape;
  const auto bound = bind_constants(tape, params);
  const auto out = model_forward(tape, bound, sample, c);
  EXPECT_EQ(tape.value(out.latents).dims, (Shape{7, 256}));
  EXPECT_EQ(tape.value(out.hidden).dims, (Shape{7, 400}));
  EXPECT_EQ(tape.value(out.attention.context).dims, (Shape{400}));
  EXPECT_EQ(tape.value(out.attention.weights).dims, (Shape{7}));
  EXPECT_EQ(tape.value(out.classifier.probs).dims, (Shape{2}));
}

TEST(Model, EncoderAgreesWithBatchedPath) {
  const ModelConfig c = tiny_config();
  auto params = init_params(c, 8);
  Rng rng(2);
  for (auto& [n, t] : params)
    for (auto& v : t.values) v += static_cast<float>(0.1 * rng.normal());
  const auto sample = random_sample(c, 3, 4);
  Tape<float> tape;
  const auto bound = bind_constants(tape, params);
  const auto out = model_forward(tape, bound, sample, c);
  for (std::size_t w = 0; w < 3; ++w) {
    const auto z = tape.value(encoder_forward(tape, bound, tape.constant(sample.windows[w]), c));
    const auto row = tape.value(out.latents).row(w);
    for (std::size_t i = 0; i < c.encoder_dim; ++i) EXPECT_EQ(z.values[i], row[i]);
  }
}

TEST(Model, ZeroParamsGiveZeroLatentAndUniformOutput) {
  const ModelConfig c;
  auto params = init_params(c, 5);
  for (auto& [n, t] : params) std::fill(t.values.begin(), t.values.end(), 0.0f);
  const auto sample = random_sample(c, 7, 2);
  Tape<float> tape;
  const auto bound = bind_constants(tape, params);
  const auto z = tape.value(encoder_forward(tape, bound, tape.constant(sample.windows[0]), c));
  for (float v : z.values) EXPECT_EQ(v, 0.0f);
  const auto probs = predict(params, sample, c);
  EXPECT_FLOAT_EQ(probs[0], 0.5f);
  EXPECT_FLOAT_EQ(probs[1], 0.5f);
}

TEST(Model, AttentionIsConvexCombination) {
  const ModelConfig c = tiny_config();
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto params = init_params(c, rng.next_u64());
    for (auto& [n, t] : params)
      for (auto& v : t.values) v += static_cast<float>(rng.normal());
    const auto sample = random_sample(c, 1 + rng.below(6), rng.next_u64());
    Tape<float> tape;
    const auto bound = bind_constants(tape, params);
    const auto out = model_forward(tape, bound, sample, c);
    const auto& a = tape.value(out.attention.weights).values;
    double total = 0.0;
    for (float v : a) {
      EXPECT_GE(v, 0.0f);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Model, SingleWindowAttentionIsOne) {
  const ModelConfig c = tiny_config();
  const auto params = init_params(c, 3);
  Tape<float> tape;
  const auto bound = bind_constants(tape, params);
  const auto out = model_forward(tape, bound, random_sample(c, 1, 9), c);
  EXPECT_FLOAT_EQ(tape.value(out.attention.weights).values[0], 1.0f);
}

TEST(Model, BiLstmDirectionsSeeOnlyTheirPast) {
  const ModelConfig c = tiny_config();
  auto params = init_params(c, 6);
  Rng rng(4);
  Tensor<float> z({4, c.encoder_dim});
  for (auto& v : z.values) v = static_cast<float>(rng.normal());
  auto run = [&](const Tensor<float>& latents) {
    Tape<float> tape;
    const auto bound = bind_constants(tape, params);
    return tape.value(bilstm_forward(tape, bound, tape.constant(latents), c));
  };
  const auto base = run(z);
  auto last_changed = z;
  last_changed.at(3, 0) += 1.0f;
  auto first_changed = z;
  first_changed.at(0, 0) += 1.0f;
  const auto a = run(last_changed);
  const auto b = run(first_changed);
  const std::size_t h = c.lstm_hidden;
  for (std::size_t i = 0; i < h; ++i) {
    EXPECT_EQ(a.at(0, i), base.at(0, i));          // forward h_0 ignores z_3
    EXPECT_EQ(b.at(3, h + i), base.at(3, h + i));  // backward h_3 ignores z_0
  }
  EXPECT_NE(a.at(0, h), base.at(0, h));  // backward h_0 sees z_3
}

TEST(Model, RejectsWrongWindowShape) {
  const ModelConfig c;
  const auto params = init_params(c, 1);
  WindowedSample s;
  s.windows.push_back(Tensor<float>({53, 19}));
  EXPECT_THROW(predict(params, s, c), ShapeError);
  s.windows.clear();
  EXPECT_THROW(predict(params, s, c), ShapeError);
}

TEST(Model, PredictIsDeterministicAndNormalized) {
  const ModelConfig c;
  const auto params = init_params(c, 2);
  const auto s = random_sample(c, 7, 3);
  const auto p1 = predict(params, s, c);
  EXPECT_EQ(p1, predict(params, s, c));
  EXPECT_NEAR(p1[0] + p1[1], 1.0f, 1e-6f);
}

TEST(Model, FloatAndDoublePathsAgree) {
  const ModelConfig c;
  const auto params = init_params(c, 7);
  const auto s = random_sample(c, 7, 8);
  const auto pf = predict(params, s, c);
  const auto pd_params = cast_params<double>(params);
  Tape<double> tape;
  const auto bound = bind_constants(tape, pd_params);
  const auto out = model_forward(tape, bound, s, c);
  EXPECT_NEAR(pf[1], tape.value(out.classifier.probs).values[1], 1e-4);
}

TEST(Model, EndToEndGradientsOnTinyConfig) {
  const ModelConfig c = tiny_config();
  auto params = cast_params<double>(init_params(c, 31));
  Rng rng(5);
  for (auto& [n, t] : params)
    for (auto& v : t.values) v += 0.2 * rng.normal();
  const auto sample = random_sample(c, 3, 77, 1);
  GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.samples_per_tensor = 10;
  const auto r = finite_difference_check(
      [&](Tape<double>& tape, const BoundVars& vars) {
        return tape.cross_entropy(model_forward(tape, vars, sample, c).classifier.probs, 1);
      },
      params, opts);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
  EXPECT_GT(r.checked, 100u);
}

TEST(Model, HeadGradientsMatchDifferences) {
  const ModelConfig c = tiny_config();
  auto params = cast_params<double>(init_params(c, 12));
  const auto sample = random_sample(c, 2, 5, 0);
  GradCheckOptions opts;
  opts.eps = 1e-5;
  opts.samples_per_tensor = 100;
  DoubleParams head;
  for (const char* n : {"head.hidden.weight", "head.hidden.bias", "head.out.weight", "head.out.bias"}) {
    head[n] = params.at(n);
  }
  const auto r = finite_difference_check(
      [&](Tape<double>& tape, const BoundVars& vars) {
        BoundParams all = bind_constants(tape, params);
        for (const auto& [n, v] : vars) all[n] = v;
        return tape.cross_entropy(model_forward(tape, all, sample, c).classifier.probs, 0);
      },
      head, opts);
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst_param;
}

}  // namespace
}  // namespace tdir
