#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tdir/tape.hpp"
#include "tdir/tensor.hpp"

namespace tdir {

using DoubleParams = std::map<std::string, Tensor<double>>;
using BoundVars = std::map<std::string, Var>;

/// Records a scalar loss on `tape` from the bound parameters.
using LossBuilder = std::function<Var(Tape<double>& tape, const BoundVars& params)>;

struct GradCheckOptions {
  double eps = 1e-3;
  /// Scalars sampled per tensor; tensors smaller than this are checked fully.
  std::size_t samples_per_tensor = 10;
  std::uint64_t seed = 0;
  /// Added to every analytic gradient before comparison. Test hook for the
  /// failure path; leave at zero.
  double analytic_offset = 0.0;
  /// Lower bound on the error denominator. Central differences in double
  /// carry ~1e-10 absolute roundoff, so gradients far below this floor are
  /// compared in absolute rather than relative terms.
  double denominator_floor = 1e-6;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients against central differences
/// (f(p+eps) − f(p−eps)) / 2eps. Relative error per scalar is
/// |analytic − numeric| / max(floor, |analytic| + |numeric|); the maximum is
/// returned. Everything runs in 64-bit arithmetic.
GradCheckResult finite_difference_check(const LossBuilder& forward_fn, DoubleParams& params,
                                        const GradCheckOptions& options = {});

struct OpCheck {
  std::string op;
  GradCheckResult result;  // worst over all points
  std::size_t points = 0;
};

struct SuiteOptions {
  /// Random points per primitive; the reduced model is checked at
  /// max(1, points / 25) points.
  std::size_t points = 100;
  std::uint64_t seed = 0;
  double eps = 1e-3;
  /// Smaller step for the full network, whose many leaky ReLU units would
  /// otherwise put kinks inside the difference interval.
  double model_eps = 1e-5;
  /// Op whose analytic gradients get `corrupt_offset` added (failure-path hook).
  std::string corrupt_op;
  double corrupt_offset = 1e-2;
};

/// Names checked by run_gradcheck_suite, in order. The last one is "model".
std::vector<std::string> gradcheck_suite_ops();

/// Checks every differentiable primitive, plus the full network on a reduced
/// config, against central differences.
std::vector<OpCheck> run_gradcheck_suite(const SuiteOptions& options = {});

}  // namespace tdir
