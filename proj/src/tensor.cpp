#include "tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace catface {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    n *= static_cast<size_t>(d);
  }
  return n;
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  size_t n = shape_numel(shape);
  t.node_->shape = std::move(shape);
  t.node_->data.assign(n, 0.0);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.node_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  size_t n = shape_numel(shape);
  if (n != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(data);
  return t;
}

Tensor Tensor::identity(int n) {
  Tensor t = zeros({n, n});
  for (int i = 0; i < n; ++i) t.node_->data[static_cast<size_t>(i) * n + i] = 1.0;
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.node_->data) v = rng.normal(0.0, stddev);
  return t;
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.node_->data) v = rng.uniform(lo, hi);
  return t;
}

double Tensor::value() const {
  if (size() != 1) throw DimensionError("value() requires a scalar, got " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (idx.size() != node_->shape.size()) {
    throw DimensionError("index rank mismatch for shape " + shape_str(shape()));
  }
  size_t off = 0;
  size_t axis = 0;
  for (int i : idx) {
    off = off * static_cast<size_t>(node_->shape[axis]) + static_cast<size_t>(i);
    ++axis;
  }
  return node_->data[off];
}

std::vector<double>& Tensor::grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.node_->shape = node_->shape;
  t.node_->data = node_->data;
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

namespace {
thread_local GradTape* g_active_tape = nullptr;
std::atomic<bool> g_finite_checks{true};
}  // namespace

GradTape::Scope::Scope(GradTape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
GradTape::Scope::~Scope() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::backward(const Tensor& loss) {
  if (consumed_) throw NumericError("GradTape::backward called twice on one tape");
  if (loss.size() != 1) {
    throw DimensionError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  consumed_ = true;
  loss.node()->grad.assign(1, 1.0);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  records_.clear();
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

namespace detail {
void check_finite(const double* p, size_t n, const char* op_name) {
  if (!finite_checks_enabled()) return;
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op_name + " at index " +
                         std::to_string(i));
    }
  }
}
}  // namespace detail

}  // namespace catface
