#include "restorl/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace restorl {

void apply_update(std::vector<double>& params, const std::vector<double>& grad,
                  OptimizerState& state, const OptimizerHyper& hyper) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument("apply_update: parameter/gradient size mismatch");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw std::runtime_error("apply_update: non-finite gradient at index " + std::to_string(i) +
                               " (value " + std::to_string(grad[i]) + ")");
    }
  }

  if (hyper.kind == OptimizerKind::sgd) {
    ++state.step_count;
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= hyper.lr * grad[i];
    return;
  }

  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("apply_update: optimizer state size mismatch");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(hyper.beta1, t);
  const double bc2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grad[i];
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer kind: " + s);
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

}  // namespace restorl
