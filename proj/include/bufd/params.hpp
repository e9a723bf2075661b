#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bufd/tensor.hpp"

namespace bufd {

/// One named tensor plus its gradient and, when trainable, Adam state.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  std::int64_t adam_t = 0;
};

/// Named tensor collection with deterministic (insertion) order. Holds
/// convolution kernels and biases, batch-norm gamma/beta, and the
/// non-trainable batch-norm running statistics.
template <typename T>
class ParameterSet {
 public:
  Param<T>& add(std::string name, Tensor<T> value, bool trainable = true) {
    if (index_.count(name))
      throw std::invalid_argument("parameter already exists: " + name);
    Param<T> p;
    p.name = name;
    p.grad = Tensor<T>(value.shape());
    if (trainable) {
      p.adam_m = Tensor<T>(value.shape());
      p.adam_v = Tensor<T>(value.shape());
    }
    p.value = std::move(value);
    p.trainable = trainable;
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  Param<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::out_of_range("no such parameter: " + name);
    return params_[it->second];
  }
  const Param<T>& get(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->get(name);
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Param<T>>& all() { return params_; }
  const std::vector<Param<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grads() {
    for (Param<T>& p : params_) p.grad.fill(T(0));
  }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const Param<T>& p : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update over every trainable parameter, consuming the
/// gradients stored in the set. Increments each tensor's step counter.
template <typename T>
void adam_step(ParameterSet<T>& params, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("adam: lr must be > 0");
  for (Param<T>& p : params.all()) {
    if (!p.trainable) continue;
    if (!p.adam_m.same_shape(p.value) || !p.adam_v.same_shape(p.value))
      throw std::logic_error("adam: state shape mismatch for " + p.name);
    p.adam_t += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.adam_t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.adam_t));
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double m = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      p.adam_m[i] = static_cast<T>(m);
      p.adam_v[i] = static_cast<T>(v);
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      p.value[i] =
          static_cast<T>(p.value[i] - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

}  // namespace bufd
