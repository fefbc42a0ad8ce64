#include "tdir/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"

namespace tdir {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParam: return "param";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kLinear: return "linear";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSum: return "sum";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

}  // namespace

template <typename T>
Var Tape<T>::push(Node n) {
  if (nodes_.size() >= Var::kNone) throw std::length_error("tape is full");
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
auto Tape<T>::node(Var v) const -> const Node& {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("invalid tape handle");
  return nodes_[v.id];
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
const std::vector<T>& Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  return n.sink ? *n.sink : n.grad;
}

template <typename T>
std::vector<T>& Tape<T>::grad_buffer(std::uint32_t id) {
  // Parameter gradients accumulate straight into the caller's buffer.
  auto& g = nodes_[id].sink ? *nodes_[id].sink : nodes_[id].grad;
  if (g.empty()) g.assign(nodes_[id].value().size(), T(0));
  return g;
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.kind = OpKind::kConstant;
  n.own = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::constant_ref(const Tensor<T>& value) {
  Node n;
  n.kind = OpKind::kConstant;
  n.ref = &value;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::param(const Tensor<T>& value, std::vector<T>* sink) {
  if (sink && !sink->empty() && sink->size() != value.values.size()) {
    throw ShapeError("param: gradient sink size differs from value size");
  }
  Node n;
  n.kind = OpKind::kParam;
  n.ref = &value;
  n.sink = sink;
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.rank() != 2 || B.rank() != 2 || A.dims[1] != B.dims[0]) shape_fail("matmul", A.dims, B.dims);
  const std::size_t M = A.dims[0], K = A.dims[1], N = B.dims[1];
  Tensor<T> out({M, N});
  for (std::size_t i = 0; i < M; ++i) {
    T* dst = out.values.data() + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      kernels::axpy(dst, A.values[i * K + k], B.values.data() + k * N, N);
    }
  }
  Node n;
  n.kind = OpKind::kMatmul;
  n.inputs = {a.id, b.id};
  n.own = std::move(out);
  n.requires_grad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::linear(Var x, Var weight, Var bias) {
  const auto& X = value(x);
  const auto& W = value(weight);
  if (W.rank() != 2 || X.rank() < 1 || X.rank() > 2 || X.dims.back() != W.dims[1]) {
    shape_fail("linear", X.dims, W.dims);
  }
  const std::size_t rows = X.rank() == 2 ? X.dims[0] : 1;
  const std::size_t in = W.dims[1], out_dim = W.dims[0];
  const Tensor<T>* B = nullptr;
  if (bias.valid()) {
    B = &value(bias);
    if (B->size() != out_dim) shape_fail("linear bias", W.dims, B->dims);
  }
  Tensor<T> out(X.rank() == 2 ? Shape{rows, out_dim} : Shape{out_dim});
  // Weight-row outer loop: each row of W is read from memory once.
  for (std::size_t o = 0; o < out_dim; ++o) {
    const T* w = W.values.data() + o * in;
    for (std::size_t r = 0; r < rows; ++r) {
      T acc = kernels::dot(X.values.data() + r * in, w, in);
      out.values[r * out_dim + o] = B ? acc + B->values[o] : acc;
    }
  }
  Node n;
  n.kind = OpKind::kLinear;
  n.inputs = {x.id, weight.id};
  if (bias.valid()) n.inputs.push_back(bias.id);
  n.own = std::move(out);
  n.requires_grad = needs(x.id) || needs(weight.id) || (bias.valid() && needs(bias.id));
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::conv1d(Var x, Var weight, Var bias, std::size_t stride) {
  const auto& X = value(x);
  const auto& W = value(weight);
  const auto& B = value(bias);
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  if (X.rank() != 2 || W.rank() != 3 || W.dims[1] != X.dims[0]) shape_fail("conv1d", X.dims, W.dims);
  if (B.size() != W.dims[0]) shape_fail("conv1d bias", W.dims, B.dims);
  const std::size_t cin = X.dims[0], len = X.dims[1];
  const std::size_t cout = W.dims[0], k = W.dims[2];
  if (len < k) {
    throw ShapeError("conv1d: input length " + std::to_string(len) + " shorter than kernel " +
                     std::to_string(k));
  }
  const std::size_t lout = (len - k) / stride + 1;
  const std::size_t patch = cin * k;
  // Patch matrix: row t holds x[c][t·stride + j] at c·k + j, matching the
  // weight layout, so each output is one contiguous dot product.
  std::vector<T> patches(lout * patch);
  for (std::size_t t = 0; t < lout; ++t) {
    T* dst = patches.data() + t * patch;
    for (std::size_t c = 0; c < cin; ++c) {
      const T* src = X.values.data() + c * len + t * stride;
      std::copy(src, src + k, dst + c * k);
    }
  }
  Tensor<T> out({cout, lout});
  for (std::size_t o = 0; o < cout; ++o) {
    const T* w = W.values.data() + o * patch;
    for (std::size_t t = 0; t < lout; ++t) {
      out.values[o * lout + t] = B.values[o] + kernels::dot(w, patches.data() + t * patch, patch);
    }
  }
  Node n;
  n.kind = OpKind::kConv1d;
  n.inputs = {x.id, weight.id, bias.id};
  n.own = std::move(out);
  n.saved = std::move(patches);
  n.aux_int = stride;
  n.requires_grad = needs(x.id) || needs(weight.id) || needs(bias.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::leaky_relu(Var x, double slope) {
  const auto& X = value(x);
  Tensor<T> out(X.dims);
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < X.size(); ++i) {
    const T v = X.values[i];
    out.values[i] = v > T(0) ? v : s * v;
  }
  Node n;
  n.kind = OpKind::kLeakyRelu;
  n.inputs = {x.id};
  n.own = std::move(out);
  n.aux_real = slope;
  n.requires_grad = needs(x.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sigmoid(Var x) {
  const auto& X = value(x);
  Tensor<T> out(X.dims);
  for (std::size_t i = 0; i < X.size(); ++i) {
    out.values[i] = T(1) / (T(1) + std::exp(-X.values[i]));
  }
  Node n;
  n.kind = OpKind::kSigmoid;
  n.inputs = {x.id};
  n.own = std::move(out);
  n.requires_grad = needs(x.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::tanh(Var x) {
  const auto& X = value(x);
  Tensor<T> out(X.dims);
  for (std::size_t i = 0; i < X.size(); ++i) out.values[i] = std::tanh(X.values[i]);
  Node n;
  n.kind = OpKind::kTanh;
  n.inputs = {x.id};
  n.own = std::move(out);
  n.requires_grad = needs(x.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.dims != B.dims) shape_fail("add", A.dims, B.dims);
  Tensor<T> out(A.dims);
  for (std::size_t i = 0; i < A.size(); ++i) out.values[i] = A.values[i] + B.values[i];
  Node n;
  n.kind = OpKind::kAdd;
  n.inputs = {a.id, b.id};
  n.own = std::move(out);
  n.requires_grad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.dims != B.dims) shape_fail("mul", A.dims, B.dims);
  Tensor<T> out(A.dims);
  for (std::size_t i = 0; i < A.size(); ++i) out.values[i] = A.values[i] * B.values[i];
  Node n;
  n.kind = OpKind::kMul;
  n.inputs = {a.id, b.id};
  n.own = std::move(out);
  n.requires_grad = needs(a.id) || needs(b.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = value(parts[0]).dims;
  Shape trailing(first.begin() + 1, first.end());
  std::size_t lead = 0;
  std::vector<T> data;
  Node n;
  n.kind = OpKind::kConcat;
  for (Var p : parts) {
    const auto& P = value(p);
    if (P.rank() != first.size() || !std::equal(trailing.begin(), trailing.end(), P.dims.begin() + 1)) {
      shape_fail("concat", first, P.dims);
    }
    lead += P.dims[0];
    data.insert(data.end(), P.values.begin(), P.values.end());
    n.inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || needs(p.id);
  }
  Shape dims = first;
  dims[0] = lead;
  n.own = Tensor<T>(std::move(dims), std::move(data));
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::slice(Var x, std::size_t offset, std::size_t length) {
  const auto& X = value(x);
  if (length == 0 || offset + length > X.size()) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") outside " + shape_str(X.dims));
  }
  Tensor<T> out({length},
                std::vector<T>(X.values.begin() + offset, X.values.begin() + offset + length));
  Node n;
  n.kind = OpKind::kSlice;
  n.inputs = {x.id};
  n.own = std::move(out);
  n.aux_int = offset;
  n.requires_grad = needs(x.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::reshape(Var x, Shape dims) {
  const auto& X = value(x);
  if (shape_size(dims) != X.size()) shape_fail("reshape", X.dims, dims);
  Node n;
  n.kind = OpKind::kReshape;
  n.inputs = {x.id};
  n.own = Tensor<T>(std::move(dims), X.values);
  n.requires_grad = needs(x.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::row(Var x, std::size_t r) {
  const auto& X = value(x);
  if (X.rank() != 2 || r >= X.dims[0]) throw ShapeError("row: index out of range for " + shape_str(X.dims));
  return slice(x, r * X.dims[1], X.dims[1]);
}

template <typename T>
Var Tape<T>::softmax(Var x) {
  const auto& X = value(x);
  if (X.rank() != 1) throw ShapeError("softmax: expects rank-1 input, got " + shape_str(X.dims));
  Tensor<T> out(X.dims);
  const T peak = *std::max_element(X.values.begin(), X.values.end());
  T total = T(0);
  for (std::size_t i = 0; i < X.size(); ++i) {
    out.values[i] = std::exp(X.values[i] - peak);
    total += out.values[i];
  }
  for (auto& v : out.values) v /= total;
  Node n;
  n.kind = OpKind::kSoftmax;
  n.inputs = {x.id};
  n.own = std::move(out);
  n.requires_grad = needs(x.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::cross_entropy(Var probs, std::size_t true_class) {
  const auto& P = value(probs);
  if (P.rank() != 1) throw ShapeError("cross_entropy: expects rank-1 probabilities");
  if (true_class >= P.size()) {
    throw std::out_of_range("cross_entropy: class " + std::to_string(true_class) +
                            " out of range for " + std::to_string(P.size()) + " classes");
  }
  const double p = std::max(static_cast<double>(P.values[true_class]), kProbabilityFloor);
  Node n;
  n.kind = OpKind::kCrossEntropy;
  n.inputs = {probs.id};
  n.own = Tensor<T>({1}, {static_cast<T>(-std::log(p))});
  n.aux_int = true_class;
  n.requires_grad = needs(probs.id);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum(Var x) {
  const auto& X = value(x);
  T total = T(0);
  for (T v : X.values) total += v;
  Node n;
  n.kind = OpKind::kSum;
  n.inputs = {x.id};
  n.own = Tensor<T>({1}, {total});
  n.requires_grad = needs(x.id);
  return push(std::move(n));
}

template <typename T>
void Tape<T>::backward(Var loss) {
  const auto& L = value(loss);
  if (L.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(L.dims));
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = T(1);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.kind == OpKind::kParam) continue;
    backward_node(id);
  }
}

template <typename T>
void Tape<T>::backward_node(std::uint32_t id) {
  // grad_buffer() only resizes grad vectors of input nodes; nodes_ is stable.
  const Node& n = nodes_[id];
  const std::vector<T>& g = n.grad;
  const auto& Y = n.value();

  switch (n.kind) {
    case OpKind::kConstant:
    case OpKind::kParam:
      return;

    case OpKind::kMatmul: {
      const auto& A = nodes_[n.inputs[0]].value();
      const auto& B = nodes_[n.inputs[1]].value();
      const std::size_t M = A.dims[0], K = A.dims[1], N = B.dims[1];
      if (needs(n.inputs[0])) {
        auto& dA = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k)
            dA[i * K + k] += kernels::dot(g.data() + i * N, B.values.data() + k * N, N);
      }
      if (needs(n.inputs[1])) {
        auto& dB = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t k = 0; k < K; ++k)
            kernels::axpy(dB.data() + k * N, A.values[i * K + k], g.data() + i * N, N);
      }
      return;
    }

    case OpKind::kLinear: {
      const auto& X = nodes_[n.inputs[0]].value();
      const auto& W = nodes_[n.inputs[1]].value();
      const std::size_t in = W.dims[1], out_dim = W.dims[0];
      const std::size_t rows = X.size() / in;
      if (needs(n.inputs[0])) {
        auto& dX = grad_buffer(n.inputs[0]);
        for (std::size_t o = 0; o < out_dim; ++o)
          for (std::size_t r = 0; r < rows; ++r)
            kernels::axpy(dX.data() + r * in, g[r * out_dim + o], W.values.data() + o * in, in);
      }
      if (needs(n.inputs[1])) {
        auto& dW = grad_buffer(n.inputs[1]);
        for (std::size_t o = 0; o < out_dim; ++o)
          for (std::size_t r = 0; r < rows; ++r)
            kernels::axpy(dW.data() + o * in, g[r * out_dim + o], X.values.data() + r * in, in);
      }
      if (n.inputs.size() == 3 && needs(n.inputs[2])) {
        auto& dB = grad_buffer(n.inputs[2]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out_dim; ++o) dB[o] += g[r * out_dim + o];
      }
      return;
    }

    case OpKind::kConv1d: {
      const auto& X = nodes_[n.inputs[0]].value();
      const auto& W = nodes_[n.inputs[1]].value();
      const std::size_t cin = X.dims[0], len = X.dims[1];
      const std::size_t cout = W.dims[0], k = W.dims[2];
      const std::size_t lout = Y.dims[1];
      const std::size_t stride = n.aux_int;
      const std::size_t patch = cin * k;
      const std::vector<T>& patches = n.saved;
      if (needs(n.inputs[0])) {
        std::vector<T> dpatches(lout * patch, T(0));
        for (std::size_t o = 0; o < cout; ++o) {
          const T* w = W.values.data() + o * patch;
          for (std::size_t t = 0; t < lout; ++t) {
            kernels::axpy(dpatches.data() + t * patch, g[o * lout + t], w, patch);
          }
        }
        auto& dX = grad_buffer(n.inputs[0]);
        for (std::size_t t = 0; t < lout; ++t) {
          const T* src = dpatches.data() + t * patch;
          for (std::size_t c = 0; c < cin; ++c) {
            T* dst = dX.data() + c * len + t * stride;
            for (std::size_t j = 0; j < k; ++j) dst[j] += src[c * k + j];
          }
        }
      }
      if (needs(n.inputs[1])) {
        auto& dW = grad_buffer(n.inputs[1]);
        for (std::size_t o = 0; o < cout; ++o) {
          T* dw = dW.data() + o * patch;
          for (std::size_t t = 0; t < lout; ++t) {
            kernels::axpy(dw, g[o * lout + t], patches.data() + t * patch, patch);
          }
        }
      }
      if (needs(n.inputs[2])) {
        auto& dB = grad_buffer(n.inputs[2]);
        for (std::size_t o = 0; o < cout; ++o) {
          T acc = T(0);
          for (std::size_t t = 0; t < lout; ++t) acc += g[o * lout + t];
          dB[o] += acc;
        }
      }
      return;
    }

    case OpKind::kLeakyRelu: {
      const auto& X = nodes_[n.inputs[0]].value();
      const T s = static_cast<T>(n.aux_real);
      auto& dX = grad_buffer(n.inputs[0]);
      // Subgradient at exactly zero is the slope.
      for (std::size_t i = 0; i < g.size(); ++i) dX[i] += X.values[i] > T(0) ? g[i] : s * g[i];
      return;
    }

    case OpKind::kSigmoid: {
      auto& dX = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = Y.values[i];
        dX[i] += g[i] * y * (T(1) - y);
      }
      return;
    }

    case OpKind::kTanh: {
      auto& dX = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = Y.values[i];
        dX[i] += g[i] * (T(1) - y * y);
      }
      return;
    }

    case OpKind::kAdd: {
      for (int side = 0; side < 2; ++side) {
        if (!needs(n.inputs[side])) continue;
        auto& d = grad_buffer(n.inputs[side]);
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
      return;
    }

    case OpKind::kMul: {
      const auto& A = nodes_[n.inputs[0]].value();
      const auto& B = nodes_[n.inputs[1]].value();
      if (needs(n.inputs[0])) {
        auto& dA = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) dA[i] += g[i] * B.values[i];
      }
      if (needs(n.inputs[1])) {
        auto& dB = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) dB[i] += g[i] * A.values[i];
      }
      return;
    }

    case OpKind::kConcat: {
      std::size_t offset = 0;
      for (std::uint32_t in : n.inputs) {
        const std::size_t len = nodes_[in].value().size();
        if (needs(in)) {
          auto& d = grad_buffer(in);
          for (std::size_t i = 0; i < len; ++i) d[i] += g[offset + i];
        }
        offset += len;
      }
      return;
    }

    case OpKind::kSlice: {
      auto& dX = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dX[n.aux_int + i] += g[i];
      return;
    }

    case OpKind::kReshape: {
      auto& dX = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dX[i] += g[i];
      return;
    }

    case OpKind::kSoftmax: {
      T weighted = T(0);
      for (std::size_t i = 0; i < g.size(); ++i) weighted += g[i] * Y.values[i];
      auto& dX = grad_buffer(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) dX[i] += Y.values[i] * (g[i] - weighted);
      return;
    }

    case OpKind::kCrossEntropy: {
      const std::uint32_t probs_id = n.inputs[0];
      const Node& probs = nodes_[probs_id];
      const T upstream = g[0];
      const std::size_t cls = n.aux_int;
      if (probs.kind == OpKind::kSoftmax) {
        const std::uint32_t logits_id = probs.inputs[0];
        const auto& P = probs.value();
        auto& dZ = grad_buffer(logits_id);
        for (std::size_t i = 0; i < P.size(); ++i) {
          dZ[i] += upstream * (P.values[i] - (i == cls ? T(1) : T(0)));
        }
      } else {
        const T p = probs.value().values[cls];
        if (static_cast<double>(p) > kProbabilityFloor) grad_buffer(probs_id)[cls] -= upstream / p;
      }
      return;
    }

    case OpKind::kSum: {
      auto& dX = grad_buffer(n.inputs[0]);
      for (auto& v : dX) v += g[0];
      return;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace tdir
