#pragma once

#include <string>
#include <vector>

#include "shisr/ops.hpp"
#include "shisr/rng.hpp"
#include "shisr/tensor.hpp"

namespace shisr {

/// A named model tensor. Trainable entries are optimized; the rest are
/// buffers (batch-norm running statistics) that are only serialized.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

class ParameterList {
 public:
  /// Throws ConfigError on a duplicate name.
  void add(std::string name, Tensor value, bool trainable = true);
  void append(const ParameterList& other);

  const std::vector<Parameter>& items() const { return items_; }
  std::vector<Parameter> trainable() const;
  const Parameter* find(const std::string& name) const;
  std::size_t size() const { return items_.size(); }

  /// Number of trainable scalars.
  std::size_t scalar_count() const;
  /// Number of trainable scalars whose name starts with `prefix`.
  std::size_t scalar_count(const std::string& prefix) const;

  void zero_grad() const;

 private:
  std::vector<Parameter> items_;
};

/// Kaiming-uniform for ReLU networks: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
void kaiming_uniform(Tensor& t, int fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, ConvOptions options, bool with_bias,
         Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  int in_channels() const { return weight.shape().c; }
  int out_channels() const { return weight.shape().n; }

  Tensor weight;  // (out, in, k, k)
  Tensor bias;    // (1, out, 1, 1) or undefined
  ConvOptions options;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor weight;  // (out, in, 1, 1)
  Tensor bias;    // (1, out, 1, 1) or undefined
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

}  // namespace shisr
