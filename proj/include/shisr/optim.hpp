#pragma once

#include <span>
#include <vector>

#include "shisr/nn.hpp"

namespace shisr {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates of one parameter plus its step counter.
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  long step = 0;
};

/// One bias-corrected ADAM update of `param` in place.
void adam_step(std::span<Real> param, std::span<const Real> grad, AdamState& state,
               const AdamOptions& options);

/// ADAM over every trainable entry of a parameter list. Buffers are ignored.
class Adam {
 public:
  Adam(const ParameterList& params, AdamOptions options);

  /// Applies one update from the accumulated gradients.
  void step();
  void zero_grad();

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  const AdamOptions& options() const { return options_; }

  const std::vector<Parameter>& params() const { return params_; }
  std::vector<AdamState>& states() { return states_; }
  const std::vector<AdamState>& states() const { return states_; }

 private:
  std::vector<Parameter> params_;
  std::vector<AdamState> states_;
  AdamOptions options_;
};

}  // namespace shisr
