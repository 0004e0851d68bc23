#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "shisr/tensor.hpp"

namespace shisr {

/// Defaults depend on the build: single precision needs large steps,
/// extrapolation and a per-tensor error norm to stay above rounding noise.
struct GradCheckOptions {
  /// Largest central-difference step.
  double step = sizeof(Real) == 4 ? 2e-2 : 1e-6;
  /// Pass threshold on the maximum relative error.
  double tolerance = sizeof(Real) == 4 ? 1e-3 : 1e-6;
  /// Differences are taken at steps step * j / stencil, j = 1..stencil, and
  /// combined by least squares.
  int stencil = sizeof(Real) == 4 ? 4 : 1;
  /// Cancel the h^2 truncation term in the combination (needs >= 2 steps).
  bool richardson = sizeof(Real) == 4;
  /// Coordinates probed per input tensor.
  int max_coords = 48;
  /// Error denominators are at least this fraction of the largest gradient
  /// entry over all inputs.
  double floor_fraction = 1e-2;
  /// Probes whose slopes at step and step / 2 disagree by more than this
  /// fraction straddle a non-differentiable point (ReLU, max-pool ties) and
  /// are skipped.
  double kink_ratio = 0.05;
  /// Error of a tensor is ||analytic - numeric|| over its probes divided by
  /// the larger of the two slope norms and the probes' share of the full
  /// gradient norm, instead of the worst single probe.
  bool normwise = sizeof(Real) == 4;
  /// Replay the ReLU / max-pool / L1 decisions of the unperturbed point
  /// during the numeric probes (see FrozenPattern).
  bool freeze_kinks = sizeof(Real) == 4;
};

struct GradCheckResult {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool passed = false;
};

/// Compares reverse-mode gradients of f = sum_k <w_k, out_k> (random fixed
/// weights w_k) against central differences at sampled coordinates of
/// every tensor in `inputs`.
/// `forward` must rebuild the outputs from the current input values.
GradCheckResult check_gradients(const std::string& name,
                                const std::function<std::vector<Tensor>()>& forward,
                                const std::vector<Tensor>& inputs, std::uint64_t seed,
                                const GradCheckOptions& options = {});

struct GradCheckCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed, const GradCheckOptions&)> run;
};

/// Every differentiable op, composite block, micro network and loss.
std::vector<GradCheckCase> gradient_suite();

}  // namespace shisr
