#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace amd {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float64 tensor of rank <= 4 with (N,C,H,W) semantics.
///
/// Tensor is a shared handle: copies alias the same storage, which is what the
/// tape needs to route adjoints back to the tensors a graph was built from.
/// Use clone() for an independent deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  /// Entries uniform in [lo, hi).
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double& operator[](std::size_t i) { return data()[i]; }
  double operator[](std::size_t i) const { return data()[i]; }
  /// Element access for rank-4 tensors.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  /// Gradient buffer; allocated zero-filled on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad();

  /// Deep copy of the values; the copy does not require grad.
  Tensor clone() const;
  /// Same values as a new tensor with a different shape of equal size.
  Tensor reshaped(Shape shape) const;

  bool is_same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  Impl& impl() const;

  std::shared_ptr<Impl> impl_;
};

/// Throws std::invalid_argument if the shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace amd
