#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "amd/tensor.hpp"

namespace amd {

class Rng;

/// Ordered, named collection of trainable tensors with one momentum buffer per
/// parameter. Buffers are zero-filled when a parameter is added.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor momentum;
  };

  /// Adds a parameter (marked requires_grad) and returns the stored handle.
  Tensor& add(std::string name, Tensor value);
  /// Adds a parameter initialized uniform in +-sqrt(6 / (fan_in + fan_out)).
  Tensor& add_glorot(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  /// Appends every entry of `other` with `prefix` prepended to its name.
  void extend(const ParamSet& other, std::string_view prefix = {});

  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  void set_requires_grad(bool on);
  /// Deep copy: independent values, fresh momentum buffers.
  ParamSet clone() const;

 private:
  std::vector<Entry> entries_;
};

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// v <- momentum * v + (grad + weight_decay * w); w <- w - lr * v; then grads
/// are zeroed. Throws if any parameter has no gradient buffer.
void sgd_step(ParamSet& params, const SgdOptions& opts);

/// Bitwise equality of names, shapes and values.
bool identical_values(const ParamSet& a, const ParamSet& b);

}  // namespace amd
