/* Copyright 2026 The DMSN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef DMSN_PARAMS_HPP_
#define DMSN_PARAMS_HPP_

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dmsn/tensor.hpp"

namespace dmsn {

// Parameter names are "<layer id>.<field>", e.g. "res3.0.main2.weight" or
// "res3.0.main2.bn.scale". The field suffix determines the role.
enum class ParamRole {
  kWeight,
  kBias,
  kNormScale,
  kNormShift,
  kRunningMean,
  kRunningVar,
};

inline ParamRole param_role(std::string_view name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.substr(name.size() - suffix.size()) == suffix;
  };
  if (ends_with(".bn.scale")) return ParamRole::kNormScale;
  if (ends_with(".bn.shift")) return ParamRole::kNormShift;
  if (ends_with(".bn.running_mean")) return ParamRole::kRunningMean;
  if (ends_with(".bn.running_var")) return ParamRole::kRunningVar;
  if (ends_with(".bias")) return ParamRole::kBias;
  return ParamRole::kWeight;
}

inline bool is_trainable(ParamRole role) {
  return role != ParamRole::kRunningMean && role != ParamRole::kRunningVar;
}

// Layer id of a parameter name: everything before ".weight", ".bias" or ".bn.".
inline std::string layer_of(std::string_view name) {
  if (auto pos = name.find(".bn."); pos != std::string_view::npos) {
    return std::string(name.substr(0, pos));
  }
  auto pos = name.rfind('.');
  return std::string(pos == std::string_view::npos ? name
                                                   : name.substr(0, pos));
}

template <typename T>
class ParamBundle {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  Tensor<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw missing(name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw missing(name);
    return it->second;
  }
  const Tensor<T>* find(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? nullptr : &it->second;
  }
  bool contains(const std::string& name) const {
    return entries_.count(name) != 0;
  }

  void set(const std::string& name, Tensor<T> tensor) {
    entries_.insert_or_assign(name, std::move(tensor));
  }
  // Adds into an existing entry, creating it on first use.
  void accumulate(const std::string& name, const Tensor<T>& delta) {
    auto [it, inserted] = entries_.try_emplace(name, delta);
    if (inserted) return;
    if (it->second.dims() != delta.dims()) {
      throw std::invalid_argument("gradient shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < delta.numel(); ++i) it->second[i] += delta[i];
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Map& entries() const { return entries_; }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t total = 0;
    for (const auto& [name, t] : entries_) {
      if (!trainable_only || is_trainable(param_role(name))) total += t.numel();
    }
    return total;
  }

  friend bool operator==(const ParamBundle&, const ParamBundle&) = default;

 private:
  static std::out_of_range missing(const std::string& name) {
    return std::out_of_range("no parameter '" + name + "' for layer '" +
                             layer_of(name) + "'");
  }

  Map entries_;
};

template <typename To, typename From>
ParamBundle<To> bundle_cast(const ParamBundle<From>& src) {
  ParamBundle<To> out;
  for (const auto& [name, t] : src) out.set(name, tensor_cast<To>(t));
  return out;
}

}  // namespace dmsn

#endif  // DMSN_PARAMS_HPP_
