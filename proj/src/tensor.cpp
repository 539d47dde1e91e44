#include "msdnet/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "msdnet/errors.hpp"

namespace msdnet {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) {
  for (auto d : shape) {
    if (d == 0) throw ConfigError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  impl_ = std::make_shared<Impl>();
  impl_->data.assign(msdnet::numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  if (values.size() != msdnet::numel(shape)) {
    throw ConfigError("tensor data length " + std::to_string(values.size()) +
                      " does not match shape " + shape_string(shape));
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw UsageError("access to an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw UsageError("axis out of range for shape " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<double> Tensor::data() {
  if (!impl_) throw UsageError("access to an undefined tensor");
  return impl_->data;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw UsageError("access to an undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on a tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<double> Tensor::grad() const {
  if (!impl_) throw UsageError("access to an undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + where);
  }
}

}  // namespace msdnet
