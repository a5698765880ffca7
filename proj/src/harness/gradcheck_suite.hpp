#pragma once

#include <string>
#include <vector>

namespace sgti {

struct GradCheckResult {
  std::string name;
  double error = 0; // worst over the trials
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckResult> results;
  int failures = 0;
  double seconds = 0;
  std::string text;
};

// Central differences against reverse mode for every differentiable op, the
// losses, and one layer of each model. With inject_matmul_fault the matmul
// adjoint is deliberately wrong for the duration of the run.
GradCheckReport run_gradcheck_suite(bool inject_matmul_fault = false,
                                    double tolerance = 1e-3, int trials = 3);

} // namespace sgti
