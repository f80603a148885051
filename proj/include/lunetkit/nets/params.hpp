#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lunetkit/diffcore/serialize.hpp"
#include "lunetkit/diffcore/tape.hpp"

namespace lunetkit::nets {

using diffcore::NamedTensor;
using diffcore::Shape;
using diffcore::Tape;
using diffcore::Tensor;
using diffcore::Var;

/// Ordered, named parameter storage. Layers refer to entries by index.
template <std::floating_point T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Shape shape) {
    for (const auto& e : entries_) {
      require(e.name != name, ErrorCode::InvalidConfig, "duplicate parameter name " + name);
    }
    entries_.push_back({std::move(name), Tensor<T>(std::move(shape))});
    return entries_.size() - 1;
  }

  /// U(-limit, limit) with limit = sqrt(6 / fan_in).
  void init_fan_in_uniform(std::size_t index, std::size_t fan_in, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : entries_.at(index).tensor.values()) v = static_cast<T>(dist(rng));
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Tensor<T>& tensor(std::size_t i) { return entries_.at(i).tensor; }
  const Tensor<T>& tensor(std::size_t i) const { return entries_.at(i).tensor; }
  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  const std::vector<NamedTensor<T>>& entries() const noexcept { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::vector<diffcore::ManifestEntry> manifest() const {
    std::vector<diffcore::ManifestEntry> m;
    for (const auto& e : entries_) m.push_back({e.name, e.tensor.shape()});
    return m;
  }

  /// Copies values from a named list; names and shapes must match exactly.
  template <std::floating_point U>
  void assign(const std::vector<NamedTensor<U>>& values) {
    require(values.size() == entries_.size(), ErrorCode::InvalidConfig,
            "parameter count mismatch: expected " + std::to_string(entries_.size()) + ", got " +
                std::to_string(values.size()));
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      require(values[i].name == entries_[i].name &&
                  values[i].tensor.shape() == entries_[i].tensor.shape(),
              ErrorCode::InvalidConfig, "parameter manifest mismatch at " + entries_[i].name);
      auto dst = entries_[i].tensor.values();
      auto src = values[i].tensor.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(src[k]);
    }
  }

  template <std::floating_point U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& e : entries_) {
      std::size_t i = out.add(e.name, e.tensor.shape());
      auto src = e.tensor.values();
      auto dst = out.tensor(i).values();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    }
    return out;
  }

  bool operator==(const ParameterStore& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          !(entries_[i].tensor == other.entries_[i].tensor)) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<NamedTensor<T>> entries_;
};

/// Places parameters on a tape on first use. A mutable store yields
/// gradient-receiving leaves; a const store yields read-only inputs.
template <std::floating_point T>
class Binder {
 public:
  Binder(Tape<T>& tape, ParameterStore<T>& store)
      : tape_(&tape), mutable_(&store), store_(&store), cache_(store.size()) {}
  Binder(Tape<T>& tape, const ParameterStore<T>& store)
      : tape_(&tape), store_(&store), cache_(store.size()) {}

  Var<T> operator()(std::size_t index) {
    auto& slot = cache_.at(index);
    if (!slot) {
      slot = mutable_ ? tape_->leaf(mutable_->tensor(index)) : tape_->input(store_->tensor(index));
    }
    return *slot;
  }

  Tape<T>& tape() const noexcept { return *tape_; }

 private:
  Tape<T>* tape_;
  ParameterStore<T>* mutable_ = nullptr;
  const ParameterStore<T>* store_;
  std::vector<std::optional<Var<T>>> cache_;
};

}  // namespace lunetkit::nets
