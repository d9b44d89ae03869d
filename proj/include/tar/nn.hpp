#pragma once

#include <memory>

#include "tar/ops.hpp"

namespace tar {

// A named trainable tensor. Parameters are owned by a ParameterStore so the
// optimizer and checkpointing see a stable, creation-ordered list.
template <class S>
struct Parameter {
  std::string name;
  Tensor<S> value;
};

template <class S>
class ParameterStore {
 public:
  Parameter<S>& create(const std::string& name, Shape shape) {
    if (find(name)) fail("params", "duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->value = Tensor<S>(std::move(shape));
    p->value.set_requires_grad(true);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<S>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  const std::vector<std::unique_ptr<Parameter<S>>>& all() const { return params_; }
  size_t size() const { return params_.size(); }

  long total_elements() const {
    long n = 0;
    for (auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->value.zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> params_;
};

// Fan-based uniform init (Glorot for linears, He-style bound works fine for
// the small nets here). Biases start at zero unless filled explicitly.
template <class S>
void init_uniform(Parameter<S>& p, Rng& rng, double bound) {
  for (S& v : p.value.values()) v = static_cast<S>(rng.uniform(-bound, bound));
}

template <class S>
void init_glorot(Parameter<S>& p, Rng& rng, long fan_in, long fan_out) {
  init_uniform(p, rng, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

template <class S>
void init_normal(Parameter<S>& p, Rng& rng, double stddev) {
  for (S& v : p.value.values()) v = static_cast<S>(rng.normal(0.0, stddev));
}

template <class S>
void fill(Parameter<S>& p, S v) {
  std::fill(p.value.values().begin(), p.value.values().end(), v);
}

}  // namespace tar
