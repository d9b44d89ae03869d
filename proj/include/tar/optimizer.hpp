#pragma once

#include "tar/nn.hpp"

namespace tar {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are part of the training state
// and round-trip through checkpoints so a resumed run continues bit-for-bit.
template <class S>
class Adam {
 public:
  Adam(ParameterStore<S>& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
    for (auto& p : store.all()) {
      m_.emplace_back(p->value.numel(), S(0));
      v_.emplace_back(p->value.numel(), S(0));
    }
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const auto& params = store_->all();
    for (size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi]->value;
      if (!p.has_grad()) continue;  // parameter never touched by this graph
      const auto& g = p.grad();
      auto& vals = p.values();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (size_t i = 0; i < vals.size(); ++i) {
        if (!std::isfinite(static_cast<double>(g[i])))
          fail("adam", "non-finite gradient in parameter " + params[pi]->name);
        m[i] = static_cast<S>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
        v[i] = static_cast<S>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        vals[i] -= static_cast<S>(cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }
  std::vector<std::vector<S>>& first_moments() { return m_; }
  std::vector<std::vector<S>>& second_moments() { return v_; }
  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  ParameterStore<S>* store_;
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

}  // namespace tar
