#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace shisr {

#ifdef SHISR_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward pass produced NaN or Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// (batch, channel, height, width).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  int operator[](int axis) const;
  std::array<int, 4> dims() const { return {n, c, h, w}; }
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

class Tensor;

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  /// Allocates the gradient buffer lazily (zero-filled).
  Real* grad_buffer();
};

/// Creates an operation result. Records `backward` on the tape only when
/// gradient mode is on and one of `inputs` requires a gradient. Throws
/// NumericError when `data` contains a non-finite value.
Tensor make_result(const char* op, Shape shape, std::vector<Real> data,
                   std::initializer_list<const Tensor*> inputs,
                   BackwardFn backward);
Tensor make_result(const char* op, Shape shape, std::vector<Real> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace detail

/// Dense 4-D tensor of Real values. Copies share storage; operations never
/// modify their inputs, so a Tensor is a value once an op has produced it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values,
                     bool requires_grad = false);
  /// Single-element (1,1,1,1) tensor.
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const Real> data() const;
  /// Direct write access. Reserved for leaves: initializers, the optimizer
  /// and the finite-difference harness.
  std::span<Real> mutable_data();

  Real at(int n, int c, int h, int w) const;
  Real item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  /// Accumulated gradient; zeros when no backward pass has reached the tensor.
  std::vector<Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  /// Same values, cut from the tape.
  Tensor detach() const;
  /// Deep copy of the values (no tape).
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor detail::make_result(const char*, Shape, std::vector<Real>,
                                    std::initializer_list<const Tensor*>,
                                    detail::BackwardFn);
  friend Tensor detail::make_result(const char*, Shape, std::vector<Real>,
                                    const std::vector<Tensor>&,
                                    detail::BackwardFn);
};

/// Runs reverse-mode differentiation from a single-element tensor. Leaf
/// gradients accumulate across calls; the recorded graph behind `loss` is
/// released afterwards, so each forward pass supports exactly one backward.
void backward(const Tensor& loss);

/// Process-wide switch for recording operations on the tape.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool enabled);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Bitwise equality of shape and values.
bool bit_identical(const Tensor& a, const Tensor& b);

}  // namespace shisr
