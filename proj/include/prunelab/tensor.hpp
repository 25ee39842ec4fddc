#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prunelab/errors.hpp"
#include "prunelab/rng.hpp"

namespace prunelab {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    check(d >= 0, "negative extent in shape");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape);

/// Dense n-dimensional float32 array, row-major. A Tensor is a cheap handle
/// sharing its storage; ops never mutate inputs and always allocate fresh
/// outputs. The shape is fixed at construction. Mutable access to values
/// exists only for parameter updates (optimizer, surgery, loaders).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from_values(Shape shape, std::vector<float> values);
  /// Gaussian init with the given standard deviation.
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->values.size()); }
  int dim(int i) const { return data_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(data_->shape.size()); }

  std::span<const float> values() const { return data_->values; }
  std::span<float> values_mut() { return data_->values; }

  bool requires_grad() const { return data_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    data_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !data_->grad.empty(); }
  std::span<const float> grad() const;
  std::span<float> grad_mut();
  /// Allocates (zero-filled) the gradient buffer if absent.
  void ensure_grad();
  void zero_grad() { data_->grad.clear(); }

  const std::string& name() const { return data_->name; }
  Tensor& set_name(std::string name) {
    data_->name = std::move(name);
    return *this;
  }

  /// Deep copy of values (grad is not copied).
  Tensor clone() const;

  /// Identity of the underlying storage; used by the optimizer to key
  /// per-parameter state and by the tape to route gradients.
  const void* id() const { return data_.get(); }

  struct Data {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;  // empty until ensure_grad()
    bool requires_grad = false;
    std::string name;
  };

  std::shared_ptr<Data> raw() const { return data_; }

 private:
  explicit Tensor(std::shared_ptr<Data> d) : data_(std::move(d)) {}
  std::shared_ptr<Data> data_;
};

/// Reverse-mode recording of operations. Each op taking part in gradient
/// computation pushes one backward rule; backward() replays them in reverse
/// recording order exactly once. One tape per training step; independent
/// tapes are safe to use concurrently.
class Tape {
 public:
  void record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
  }
  size_t size() const { return nodes_.size(); }

  /// Runs all recorded backward rules, newest first, then clears the tape.
  void run_backward();

 private:
  std::vector<std::function<void()>> nodes_;
};

}  // namespace prunelab
