#include "amd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "amd/rng.hpp"

namespace amd {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw std::invalid_argument("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive: " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  impl_->values.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  check_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) throw std::out_of_range("dimension index out of range");
  return s[i];
}

std::size_t Tensor::numel() const { return impl().values.size(); }

std::span<double> Tensor::data() { return impl().values; }
std::span<const double> Tensor::data() const { return impl().values; }

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  const Shape& s = shape();
  return impl().values[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = shape();
  return impl().values[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
  return impl().values[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<double> Tensor::grad() {
  Impl& i = impl();
  if (i.grad.empty()) i.grad.assign(i.values.size(), 0.0);
  return i.grad;
}

std::span<const double> Tensor::grad() const {
  Impl& i = impl();
  if (i.grad.empty()) i.grad.assign(i.values.size(), 0.0);
  return i.grad;
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::drop_grad() { impl().grad.clear(); }

Tensor Tensor::clone() const { return Tensor(shape(), impl().values); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw std::invalid_argument("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), impl().values);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

}  // namespace amd
