#include "amd/optim.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "amd/rng.hpp"

namespace amd {

Tensor& ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  Tensor momentum = Tensor::zeros(value.shape());
  entries_.push_back(Entry{std::move(name), std::move(value), std::move(momentum)});
  return entries_.back().value;
}

Tensor& ParamSet::add_glorot(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return add(std::move(name), Tensor::uniform(std::move(shape), rng, -bound, bound));
}

void ParamSet::extend(const ParamSet& other, std::string_view prefix) {
  for (const Entry& e : other.entries_) {
    std::string name = std::string(prefix) + e.name;
    if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    entries_.push_back(Entry{std::move(name), e.value, e.momentum});
  }
}

Tensor& ParamSet::get(std::string_view name) {
  for (Entry& e : entries_)
    if (e.name == name) return e.value;
  throw std::out_of_range("no parameter named " + std::string(name));
}

const Tensor& ParamSet::get(std::string_view name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return e.value;
  throw std::out_of_range("no parameter named " + std::string(name));
}

bool ParamSet::contains(std::string_view name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) n += e.value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (Entry& e : entries_) e.value.zero_grad();
}

void ParamSet::set_requires_grad(bool on) {
  for (Entry& e : entries_) {
    e.value.set_requires_grad(on);
    if (!on) e.value.drop_grad();
  }
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (const Entry& e : entries_) {
    Tensor v = e.value.clone();
    v.set_requires_grad(e.value.requires_grad());
    out.entries_.push_back(Entry{e.name, std::move(v), Tensor::zeros(e.value.shape())});
  }
  return out;
}

void sgd_step(ParamSet& params, const SgdOptions& opts) {
  for (const auto& e : params.entries()) {
    if (!e.value.has_grad()) throw std::invalid_argument("sgd_step: parameter '" + e.name + "' has no gradient");
  }
  for (auto& e : params.entries()) {
    auto w = e.value.data();
    auto g = e.value.grad();
    auto v = e.momentum.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = opts.momentum * v[i] + (g[i] + opts.weight_decay * w[i]);
      w[i] -= opts.lr * v[i];
    }
    e.value.zero_grad();
  }
}

bool identical_values(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a.entries()[i];
    const auto& y = b.entries()[i];
    if (x.name != y.name || x.value.shape() != y.value.shape()) return false;
    if (std::memcmp(x.value.data().data(), y.value.data().data(), x.value.numel() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace amd
