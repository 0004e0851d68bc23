#include "shisr/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace shisr {

int Shape::operator[](int axis) const {
  switch (axis) {
    case 0: return n;
    case 1: return c;
    case 2: return h;
    case 3: return w;
    default: throw ShapeError("axis " + std::to_string(axis) + " out of range [0,4)");
  }
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

namespace {

thread_local bool grad_mode_enabled = true;

void check_shape(const Shape& shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative extent in shape " + shape.str());
  }
}

}  // namespace

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool enabled) { grad_mode_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_mode_enabled = previous_; }

namespace detail {

Real* Node::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  return grad.data();
}

namespace {

void finish_result(const char* op, const Shape& shape, std::vector<Real> data,
                   std::vector<std::shared_ptr<Node>> inputs, BackwardFn backward,
                   const std::shared_ptr<Node>& out) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      std::ostringstream os;
      os << op << ": non-finite value " << data[i] << " at flat index " << i
         << " of output " << shape.str();
      throw NumericError(os.str());
    }
  }
  out->data = std::move(data);
  bool track = false;
  if (GradMode::enabled()) {
    for (const auto& in : inputs) track = track || in->requires_grad;
  }
  if (track) {
    out->requires_grad = true;
    out->inputs = std::move(inputs);
    out->backward = std::move(backward);
  }
}

}  // namespace

Tensor make_result(const char* op, Shape shape, std::vector<Real> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn backward) {
  if (data.size() != shape.numel()) {
    throw ShapeError(std::string(op) + ": data length does not match shape " + shape.str());
  }
  std::vector<std::shared_ptr<Node>> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor* t : inputs) nodes.push_back(t->node_ptr());
  auto node = std::make_shared<Node>();
  node->shape = shape;
  finish_result(op, shape, std::move(data), std::move(nodes), std::move(backward), node);
  return Tensor(std::move(node));
}

Tensor make_result(const char* op, Shape shape, std::vector<Real> data,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  if (data.size() != shape.numel()) {
    throw ShapeError(std::string(op) + ": data length does not match shape " + shape.str());
  }
  std::vector<std::shared_ptr<Node>> nodes;
  nodes.reserve(inputs.size());
  for (const Tensor& t : inputs) nodes.push_back(t.node_ptr());
  auto node = std::make_shared<Node>();
  node->shape = shape;
  finish_result(op, shape, std::move(data), std::move(nodes), std::move(backward), node);
  return Tensor(std::move(node));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(shape, Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->data.assign(shape.numel(), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape.numel()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                     " values for shape " + shape.str());
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = shape;
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return full({1, 1, 1, 1}, value, requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape empty{};
  return node_ ? node_->shape : empty;
}

std::span<const Real> Tensor::data() const {
  if (!node_) return {};
  return {node_->data.data(), node_->data.size()};
}

std::span<Real> Tensor::mutable_data() {
  if (!node_) return {};
  return {node_->data.data(), node_->data.size()};
}

Real Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = shape();
  if (n < 0 || n >= s.n || c < 0 || c >= s.c || h < 0 || h >= s.h || w < 0 || w >= s.w) {
    throw ShapeError("index out of range for shape " + s.str());
  }
  return node_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw Error("set_requires_grad on undefined tensor");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->data.size(); }

std::vector<Real> Tensor::grad() const {
  if (!node_) return {};
  if (!has_grad()) return std::vector<Real>(node_->data.size(), Real(0));
  return node_->grad;
}

std::span<Real> Tensor::mutable_grad() {
  if (!node_) return {};
  Real* g = node_->grad_buffer();
  return {g, node_->grad.size()};
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return from(node_->shape, node_->data, false);
}

Tensor Tensor::clone() const { return detach(); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a single-element loss, got " + loss.shape().str());
  }
  detail::Node* root = loss.node();
  if (!root->requires_grad) throw Error("backward on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Release interior nodes: their gradients and closures are single-use.
  for (detail::Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
      node->requires_grad = false;
    }
  }
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data();
  auto db = b.data();
  return da.size() == db.size() &&
         (da.empty() || std::memcmp(da.data(), db.data(), da.size() * sizeof(Real)) == 0);
}

}  // namespace shisr
