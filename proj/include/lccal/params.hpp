#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lccal/autodiff.hpp"

namespace lccal::ad {

/// Named parameter tensors in registration order.
template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, std::move(init)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) { return entries_.at(lookup(name)).value; }
  const Tensor<T>& get(const std::string& name) const { return entries_.at(lookup(name)).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Total number of scalars.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters registered as leaves on one tape.
template <typename T>
class BoundParameters {
 public:
  BoundParameters() = default;

  BoundParameters(Tape<T>& tape, const ParameterSet<T>& params) {
    for (const auto& e : params.entries()) {
      vars_.emplace(e.name, tape.variable(e.value));
      order_.push_back(e.name);
    }
  }

  const Var<T>& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw InvalidArgument("parameter '" + name + "' is not bound");
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  /// Binds an existing tape variable under `name`.
  void insert(const std::string& name, const Var<T>& v) {
    if (!vars_.emplace(name, v).second) throw InvalidArgument("parameter '" + name + "' is already bound");
    order_.push_back(name);
  }

 private:
  std::unordered_map<std::string, Var<T>> vars_;
  std::vector<std::string> order_;
};

/// He-normal init for a layer with `fan_in` inputs.
template <typename T>
Tensor<T> he_normal(const Shape& shape, int fan_in, std::mt19937_64& rng, double gain = 1.0) {
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> uniform_init(const Shape& shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace lccal::ad
