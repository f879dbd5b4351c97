// SPDX-License-Identifier: Apache-2.0
#include "mgf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mgf/errors.hpp"

namespace mgf {

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  if (shape.size() > 4) throw DimensionError("tensor rank above 4: " + shape_string(shape));
  for (auto d : shape)
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_string(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  validate_shape(shape_);
  if (data_.size() != shape_volume(shape_))
    throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size())
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice0(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0]) throw DimensionError("slice0 index out of range");
  Shape sub(shape_.begin() + 1, shape_.end());
  const std::size_t n = shape_volume(sub);
  std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(index * n),
                        data_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor(std::move(sub), std::move(v));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(std::string_view what) const {
  if (!all_finite()) throw NumericalError("non-finite value produced by " + std::string(what));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ContractError("stack of zero tensors");
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), items.size());
  std::vector<double> v;
  v.reserve(shape_volume(shape));
  for (const auto& t : items) {
    if (t.shape() != items.front().shape()) throw DimensionError("stack: shape mismatch");
    v.insert(v.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(v));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

}  // namespace mgf
