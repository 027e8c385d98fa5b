#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lrfd/graph.hpp"

namespace lrfd {

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  long step = 0;

  void validate() const {
    require(learning_rate > 0, "learning rate must be > 0");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
            "adam betas must lie in [0,1)");
  }
};

// A named trainable leaf plus its Adam moments.
template <typename T>
struct Param {
  std::string name;
  Var<T> var;
  Tensor<T> m, v;  // first/second moments, zero-initialized
};

template <typename T>
class ParamSet {
public:
  void add(const std::string& name, Var<T> var) {
    for (const auto& p : items_)
      require(p.name != name, "duplicate parameter name: ", name);
    Param<T> p;
    p.name = name;
    p.m = Tensor<T>(var.value().shape(), T(0));
    p.v = Tensor<T>(var.value().shape(), T(0));
    p.var = std::move(var);
    items_.push_back(std::move(p));
  }

  std::vector<Param<T>>& items() { return items_; }
  const std::vector<Param<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  void zero_grad() {
    for (auto& p : items_) p.var.grad().fill(T(0));
  }

  void set_trainable(bool trainable) {
    for (auto& p : items_) p.var.set_requires_grad(trainable);
  }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.var.value().size();
    return n;
  }

private:
  std::vector<Param<T>> items_;
};

// One bias-corrected Adam update; increments the step counter and clears
// gradients. Pass lr_override >= 0 to apply a scheduled rate.
template <typename T>
void adam_step(ParamSet<T>& params, OptimizerConfig& cfg, double lr_override = -1.0) {
  cfg.validate();
  const double lr = lr_override >= 0 ? lr_override : cfg.learning_rate;
  cfg.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(cfg.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(cfg.step));
  for (auto& p : params.items()) {
    if (!p.var.requires_grad()) continue;
    Tensor<T>& g = p.var.grad();
    Tensor<T>& w = p.var.value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = double(g[i]);
      const double mi = cfg.beta1 * double(p.m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * double(p.v[i]) + (1.0 - cfg.beta2) * gi * gi;
      p.m[i] = T(mi);
      p.v[i] = T(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = T(double(w[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
    g.fill(T(0));
  }
}

}  // namespace lrfd
