#pragma once

#include <functional>
#include <vector>

#include "tensor.hpp"

namespace catface {

struct GradCheckResult {
  double max_rel_err = 0.0;
  size_t checked = 0;
  bool passed(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Compares tape gradients of a scalar-valued function against central finite
// differences, element by element over every input. The function must be
// pure in its inputs; side effects (running statistics, RNG draws) would
// desynchronize the repeated evaluations. Relative error is
// |g_tape - g_fd| / max(floor, |g_tape| + |g_fd|).
GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double step = 1e-5, double floor = 1e-8);

}  // namespace catface
