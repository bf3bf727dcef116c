#include "grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"

namespace catface {

GradCheckResult grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double step, double floor) {
  for (Tensor& t : inputs) t.set_requires_grad(true);

  std::vector<std::vector<double>> analytic;
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor loss = f(inputs);
    if (loss.size() != 1) {
      throw DimensionError("grad_check: function must return a scalar, got " +
                           shape_str(loss.shape()));
    }
    tape.backward(loss);
    for (Tensor& t : inputs) analytic.push_back(t.grad());
  }
  for (Tensor& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(false);
  }

  GradCheckResult res;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    for (size_t i = 0; i < t.size(); ++i) {
      const double saved = t.ptr()[i];
      t.ptr()[i] = saved + step;
      const double fp = f(inputs).value();
      t.ptr()[i] = saved - step;
      const double fm = f(inputs).value();
      t.ptr()[i] = saved;
      const double gf = (fp - fm) / (2.0 * step);
      const double ga = analytic[ti][i];
      const double rel = std::abs(ga - gf) / std::max(floor, std::abs(ga) + std::abs(gf));
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace catface
