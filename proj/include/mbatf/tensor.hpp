#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mbatf/errors.hpp"

namespace mbatf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

// Dense row-major array with an optional same-shape gradient accumulator.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_size(shape_)) {
      throw ContractError("tensor: " + std::to_string(values_.size()) + " values do not fill shape " +
                          shape_to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return values_.size(); }

  std::span<Real> values() { return values_; }
  std::span<const Real> values() const { return values_; }
  Real* data() { return values_.data(); }
  const Real* data() const { return values_.data(); }
  Real& operator[](std::size_t i) { return values_[i]; }
  Real operator[](std::size_t i) const { return values_[i]; }
  Real& at(std::size_t row, std::size_t col) { return values_[row * shape_.back() + col]; }
  Real at(std::size_t row, std::size_t col) const { return values_[row * shape_.back() + col]; }

  bool has_grad() const { return !grad_.empty() || values_.empty(); }
  std::span<Real> grad() { return grad_; }
  std::span<const Real> grad() const { return grad_; }
  // Allocates (or resets) the accumulator to zeros.
  void zero_grad() { grad_.assign(values_.size(), Real(0)); }
  void clear_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
  }

  void reshape(Shape shape) {
    if (shape_size(shape) != values_.size()) {
      throw ContractError("tensor: cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    shape_ = std::move(shape);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<Real> values_;
  std::vector<Real> grad_;
};

// Which sub-model a parameter belongs to. The three roles partition the store.
enum class Role { kEncoder, kDiscriminator, kScorer };

std::string_view role_name(Role role);
Role role_from_name(std::string_view name);

// Named parameters in insertion order. Copying the store deep-copies every tensor.
template <typename Real>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Role role;
    Tensor<Real> tensor;
  };

  Tensor<Real>& add(std::string name, Role role, Tensor<Real> init) {
    if (index_.contains(name)) throw ContractError("parameter store: duplicate name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{std::move(name), role, std::move(init)});
    return entries_.back().tensor;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<Real>& at(const std::string& name) { return entries_[index_of(name)].tensor; }
  const Tensor<Real>& at(const std::string& name) const { return entries_[index_of(name)].tensor; }
  Role role(const std::string& name) const { return entries_[index_of(name)].role; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grads() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::size_t element_count(Role role) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.role == role) n += e.tensor.size();
    }
    return n;
  }

  // Same names, roles, shapes and values (gradients ignored).
  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.role != y.role || !(x.tensor == y.tensor)) return false;
    }
    return true;
  }

 private:
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("parameter store: unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// p <- p - lr * grad(p) for every parameter tagged `role`; their grads are cleared afterwards.
// Parameters of other roles are not touched.
template <typename Real>
void sgd_step(ParameterStore<Real>& params, Role role, Real lr) {
  for (auto& e : params.entries()) {
    if (e.role != role) continue;
    if (!e.tensor.has_grad()) {
      throw ContractError("sgd_step: parameter '" + e.name + "' has no gradient");
    }
  }
  for (auto& e : params.entries()) {
    if (e.role != role) continue;
    auto values = e.tensor.values();
    auto grad = e.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
    e.tensor.clear_grad();
  }
}

}  // namespace mbatf
