#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/tensor.hpp"

namespace mpgcn {

// Adaptive-moment state for one parameter tensor.
struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;

  static AdamState for_param(const Tensor& p) {
    AdamState s;
    s.m = Tensor(p.shape());
    s.v = Tensor(p.shape());
    return s;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v))
    throw ShapeError("adam_step: param " + shape_str(param.shape()) + ", grad " +
                     shape_str(grad.shape()) + ", state " + shape_str(state.m.shape()));
  state.step += 1;
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// A named parameter set plus its optimizer state; shared by both learned
// models so checkpoints and training loops stay uniform.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor init) {
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(init));
    states_.push_back(AdamState::for_param(tensors_.back()));
    return tensors_.size() - 1;
  }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

  Tensor* find(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return &tensors_[i];
    return nullptr;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw ContractError("no parameter named '" + name + "'");
  }

  void apply_adam(const std::vector<Tensor>& grads, double lr, const AdamConfig& cfg = {}) {
    if (grads.size() != tensors_.size())
      throw ShapeError("apply_adam: " + std::to_string(grads.size()) + " grads for " +
                       std::to_string(tensors_.size()) + " params");
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      adam_step(tensors_[i], grads[i], states_[i], lr, cfg);
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::vector<AdamState> states_;
};

}  // namespace mpgcn
