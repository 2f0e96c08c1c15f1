#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace restgate {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;

  // Allocates a zeroed gradient buffer on first use.
  std::span<double> grad_buffer();
};

// Dense row-major float64 array. A Tensor is a cheap handle: copies share
// storage. Op results are never mutated afterwards; leaf parameters are
// updated in place by the optimizer between steps.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor from(std::initializer_list<double> values);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  const std::vector<double>& values() const& { return impl_->data; }
  // Copy for temporaries, so `for (double v : f().values())` stays valid.
  std::vector<double> values() && { return impl_->data; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true) {
    impl_->requires_grad = flag;
    return *this;
  }

  // Value of a one-element tensor.
  double item() const;

  double operator[](std::size_t i) const { return impl_->data[i]; }

  // Fresh leaf with copied values and no gradient history.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Records primitive applications in execution order. Each thread owns one
// tape (`Tape::current()`), so independent training runs on different threads
// never share state. Policy: `backward` walks the entries in reverse exactly
// once, accumulating into leaf `grad` buffers, and then clears the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(const TensorImpl& output)>;

  struct Entry {
    const char* op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    BackwardFn backward;
  };

  static Tape& current();

  void record(Entry entry);
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Runs reverse-mode differentiation from a scalar loss on the current tape.
void backward(const Tensor& loss);

}  // namespace restgate
