#include "shisr/nn.hpp"

#include <cmath>

namespace shisr {

void ParameterList::add(std::string name, Tensor value, bool trainable) {
  if (!value.defined()) throw ConfigError("parameter '" + name + "' is undefined");
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  items_.push_back({std::move(name), std::move(value), trainable});
}

void ParameterList::append(const ParameterList& other) {
  for (const Parameter& p : other.items_) add(p.name, p.value, p.trainable);
}

std::vector<Parameter> ParameterList::trainable() const {
  std::vector<Parameter> out;
  for (const Parameter& p : items_) {
    if (p.trainable) out.push_back(p);
  }
  return out;
}

const Parameter* ParameterList::find(const std::string& name) const {
  for (const Parameter& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterList::scalar_count() const { return scalar_count(""); }

std::size_t ParameterList::scalar_count(const std::string& prefix) const {
  std::size_t total = 0;
  for (const Parameter& p : items_) {
    if (p.trainable && p.name.rfind(prefix, 0) == 0) total += p.value.numel();
  }
  return total;
}

void ParameterList::zero_grad() const {
  for (const Parameter& p : items_) {
    Tensor t = p.value;
    t.zero_grad();
  }
}

void kaiming_uniform(Tensor& t, int fan_in, Rng& rng) {
  if (fan_in < 1) throw ConfigError("kaiming_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / fan_in);
  for (Real& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(-bound, bound));
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, ConvOptions opts, bool with_bias,
               Rng& rng)
    : options(opts) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1) {
    throw ConfigError("Conv2d: channel counts and kernel must be positive");
  }
  weight = Tensor::zeros({out_channels, in_channels, kernel, kernel}, true);
  kaiming_uniform(weight, in_channels * kernel * kernel, rng);
  if (with_bias) bias = Tensor::zeros({1, out_channels, 1, 1}, true);
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight, bias.defined() ? &bias : nullptr, options);
}

void Conv2d::collect(const std::string& prefix, ParameterList& out) const {
  out.add(prefix + ".weight", weight);
  if (bias.defined()) out.add(prefix + ".bias", bias);
}

Linear::Linear(int in_features, int out_features, bool with_bias, Rng& rng) {
  if (in_features < 1 || out_features < 1) {
    throw ConfigError("Linear: feature counts must be positive");
  }
  weight = Tensor::zeros({out_features, in_features, 1, 1}, true);
  kaiming_uniform(weight, in_features, rng);
  if (with_bias) bias = Tensor::zeros({1, out_features, 1, 1}, true);
}

Tensor Linear::forward(const Tensor& x) const {
  return linear(x, weight, bias.defined() ? &bias : nullptr);
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.add(prefix + ".weight", weight);
  if (bias.defined()) out.add(prefix + ".bias", bias);
}

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps) {
  gamma = Tensor::full({1, channels, 1, 1}, Real(1), true);
  beta = Tensor::zeros({1, channels, 1, 1}, true);
  state.running_mean = Tensor::zeros({1, channels, 1, 1});
  state.running_var = Tensor::full({1, channels, 1, 1}, Real(1));
  state.momentum = momentum;
  state.eps = eps;
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, state, training);
}

void BatchNorm2d::collect(const std::string& prefix, ParameterList& out) const {
  out.add(prefix + ".gamma", gamma);
  out.add(prefix + ".beta", beta);
  out.add(prefix + ".running_mean", state.running_mean, false);
  out.add(prefix + ".running_var", state.running_var, false);
}

}  // namespace shisr
