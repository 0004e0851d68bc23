#include "shisr/optim.hpp"

#include <cmath>

namespace shisr {

void adam_step(std::span<Real> param, std::span<const Real> grad, AdamState& state,
               const AdamOptions& options) {
  if (param.size() != grad.size()) {
    throw ShapeError("adam_step: parameter has " + std::to_string(param.size()) +
                     " elements but gradient has " + std::to_string(grad.size()));
  }
  if (state.m.empty()) {
    state.m.assign(param.size(), Real(0));
    state.v.assign(param.size(), Real(0));
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameter size");
  }
  ++state.step;
  const double b1 = options.beta1;
  const double b2 = options.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = b1 * state.m[i] + (1.0 - b1) * g;
    const double v = b2 * state.v[i] + (1.0 - b2) * g * g;
    state.m[i] = static_cast<Real>(m);
    state.v[i] = static_cast<Real>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    param[i] = static_cast<Real>(param[i] - options.lr * m_hat / (std::sqrt(v_hat) + options.eps));
  }
}

Adam::Adam(const ParameterList& params, AdamOptions options)
    : params_(params.trainable()), states_(params_.size()), options_(options) {}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].value;
    const std::vector<Real> g = t.grad();
    adam_step(t.mutable_data(), g, states_[i], options_);
  }
}

void Adam::zero_grad() {
  for (Parameter& p : params_) p.value.zero_grad();
}

}  // namespace shisr
