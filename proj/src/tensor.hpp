#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace catface {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major tensor. Copying a Tensor copies the handle, not the
// storage: ops never mutate their inputs, so aliasing is safe during a
// forward pass, and parameter handles registered in several places all see
// the same storage when the optimizer updates it.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::TensorNode>()) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return full({1}, value); }
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor identity(int n);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  size_t size() const { return node_->data.size(); }

  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  double* ptr() { return node_->data.data(); }
  const double* ptr() const { return node_->data.data(); }

  double value() const;  // scalar tensors only
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  // Grad accessors allocate the accumulator on demand.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  // Deep copy of values (no grad, no history).
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode tape. Ops executed while a tape is active append a backward
// closure; running backward() replays them once, in reverse execution order,
// which is a reverse topological order of the recorded graph.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // RAII activation, confined to the constructing thread.
  class Scope {
   public:
    explicit Scope(GradTape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* prev_;
  };

  static GradTape* active();

  void record(std::function<void()> backward) { records_.push_back(std::move(backward)); }
  size_t size() const { return records_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Consumes the tape.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> records_;
  bool consumed_ = false;
};

// A parameter or buffer handle under a stable hierarchical name. Modules
// append their tensors in a fixed traversal order; optimizers and
// checkpoints rely on both the names and the order.
struct NamedTensor {
  std::string name;
  Tensor t;
};

// When enabled (the default), every op verifies its output is finite and
// throws NumericError otherwise. Cost is one linear scan per op.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

namespace detail {
void check_finite(const double* p, size_t n, const char* op_name);
inline void check_finite(const Tensor& t, const char* op_name) {
  check_finite(t.ptr(), t.size(), op_name);
}
}  // namespace detail

}  // namespace catface
