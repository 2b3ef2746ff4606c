#ifndef RISCADE_NN_OPTIM_HPP
#define RISCADE_NN_OPTIM_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace riscade {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long t = 0;

  void ensure_size(std::size_t n) {
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    } else if (m.size() != n) {
      throw std::invalid_argument("AdamState: parameter count changed");
    }
  }
};

// Standard bias-corrected Adam update, elementwise on flat vectors.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: size mismatch");
  state.ensure_size(params.size());
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Plain gradient step: params -= lr * grads.
inline void sgd_step(std::vector<double>& params, const std::vector<double>& grads, double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

}  // namespace riscade

#endif  // RISCADE_NN_OPTIM_HPP
