#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace restorl {

enum class OptimizerKind { sgd, adam };

struct OptimizerHyper {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::uint64_t step_count = 0;
  std::vector<double> m;  // first moment (adam)
  std::vector<double> v;  // second moment (adam)
};

// One first-order update in place. Deterministic given inputs. Non-finite
// gradients are rejected with a diagnostic naming the offending index.
void apply_update(std::vector<double>& params, const std::vector<double>& grad,
                  OptimizerState& state, const OptimizerHyper& hyper);

OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(OptimizerKind kind);

}  // namespace restorl
