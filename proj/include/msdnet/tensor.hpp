#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msdnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a handle: copies share storage. Use clone() for a deep copy.
// Feature maps use the NCHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double& operator[](std::size_t i) { return data()[i]; }
  double operator[](std::size_t i) const { return data()[i]; }

  bool has_grad() const;
  // Allocates a zero gradient on first access. The gradient belongs to the
  // shared storage, so const handles can accumulate into it too.
  std::span<double> grad() const;
  void zero_grad();
  void clear_grad();

  Tensor clone() const;
  // Same storage (identity, not value equality).
  bool is(const Tensor& other) const { return impl_ == other.impl_; }
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
  };
  std::shared_ptr<Impl> impl_;
};

// Throws NumericError naming `where` if any value is NaN or Inf.
void check_finite(const Tensor& t, const char* where);

}  // namespace msdnet
