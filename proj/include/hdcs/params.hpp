#pragma once

#include <map>
#include <string>
#include <vector>

#include "hdcs/errors.hpp"
#include "hdcs/tensor.hpp"

namespace hdcs {

// Learning-rate group: encoder-side parameters train at 10% of the base rate.
enum class LrGroup { decoder, encoder };

struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;
  LrGroup group = LrGroup::decoder;
};

// Named, shaped, differentiable arrays. Insertion order is the persistence
// order: checkpoints serialize arrays in the order parameters were added, and
// prediction weights stay index-aligned with the symbol table.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init, LrGroup group = LrGroup::decoder,
                 bool trainable = true) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    order_.push_back(name);
    Parameter& p = params_[name];
    p.value = std::move(init);
    p.grad = Tensor::zeros(p.value.shape());
    p.trainable = trainable;
    p.group = group;
    return p;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Parameter& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
  }
  const Parameter& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("no such parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  void zero_grads() {
    for (auto& name : order_) {
      auto& g = params_[name].grad;
      std::fill(g.writable().begin(), g.writable().end(), 0.0);
    }
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (auto& name : order_) n += params_.at(name).value.numel();
    return n;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Parameter> params_;
};

}  // namespace hdcs
