#include "amd/tape.hpp"

#include <stdexcept>

namespace amd {

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output, Adjoint adjoint) {
  output.set_requires_grad(true);
  entries_.push_back(Entry{std::string(op), std::move(inputs), std::move(output), std::move(adjoint)});
}

void Tape::backward(Tensor loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward() requires a scalar root, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward() root does not depend on any tensor that requires grad");
  }
  for (Entry& e : entries_) e.output.zero_grad();
  loss.grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->adjoint();
  }
}

}  // namespace amd
