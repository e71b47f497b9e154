#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "amd/tensor.hpp"

namespace amd {

/// Ordered record of differentiable operations executed during a forward pass.
///
/// Ops append an entry only when at least one input requires grad; the entry's
/// adjoint closure reads output.grad() and accumulates into the inputs' grads.
/// backward() replays entries in exact reverse execution order. Gradients of
/// intermediate outputs are reset at the start of each backward() call, while
/// leaf gradients accumulate until explicitly zeroed.
class Tape {
 public:
  using Adjoint = std::function<void()>;

  /// True if any of the inputs requires grad.
  static bool tracks(std::initializer_list<const Tensor*> inputs);

  /// Record an op. Marks `output` as requiring grad.
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output, Adjoint adjoint);

  /// Backpropagate from a one-element tensor.
  void backward(Tensor loss);

  std::size_t size() const { return entries_.size(); }
  const std::string& op_name(std::size_t i) const { return entries_.at(i).op; }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    Adjoint adjoint;
  };
  std::vector<Entry> entries_;
};

}  // namespace amd
