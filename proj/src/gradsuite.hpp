#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grad_check.hpp"

namespace catface {

struct GradSuiteCase {
  std::string name;
  GradCheckResult result;
};

struct GradSuiteReport {
  uint64_t seed = 0;
  std::vector<GradSuiteCase> cases;

  double worst() const;
  bool passed(double tol) const;
};

// Finite-difference checks for every differentiable operation plus both
// end-to-end forward paths with their training losses, at small dimensions,
// all randomness derived from the seed. Teacher-side distillation inputs
// are held fixed: their gradients are deliberately absent by detachment.
GradSuiteReport run_grad_suite(uint64_t seed);

// One line per seed plus a verdict line against the tolerance.
std::string grad_suite_summary(const std::vector<GradSuiteReport>& reports, double tol);

}  // namespace catface
