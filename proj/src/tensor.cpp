#include "prunelab/tensor.hpp"

#include <sstream>

namespace prunelab {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  auto d = std::make_shared<Data>();
  const auto n = shape_numel(shape);
  d->shape = std::move(shape);
  d->values.assign(static_cast<size_t>(n), 0.0f);
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = zeros(std::move(shape));
  for (float& v : t.data_->values) v = value;
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<float> values) {
  const auto n = shape_numel(shape);
  check(n == static_cast<std::int64_t>(values.size()), "value count ",
        values.size(), " does not match shape ", shape_str(shape));
  auto d = std::make_shared<Data>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  return Tensor(std::move(d));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  for (float& v : t.data_->values) {
    v = static_cast<float>(rng.normal() * stddev);
  }
  return t;
}

std::span<const float> Tensor::grad() const {
  check(has_grad(), "tensor '", data_->name, "' has no gradient");
  return data_->grad;
}

std::span<float> Tensor::grad_mut() {
  ensure_grad();
  return data_->grad;
}

void Tensor::ensure_grad() {
  if (data_->grad.empty()) {
    data_->grad.assign(data_->values.size(), 0.0f);
  }
}

Tensor Tensor::clone() const {
  auto d = std::make_shared<Data>();
  d->shape = data_->shape;
  d->values = data_->values;
  d->requires_grad = data_->requires_grad;
  d->name = data_->name;
  return Tensor(std::move(d));
}

void Tape::run_backward() {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    (*it)();
  }
  nodes_.clear();
}

}  // namespace prunelab
