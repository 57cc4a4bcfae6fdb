#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace s3mot {

struct GradSuiteCase {
  std::string name;
  double max_error = 0.0;
  double tol = 1e-4;
  bool pass = false;
};

struct GradSuiteResult {
  std::vector<GradSuiteCase> cases;
  bool all_pass = true;
  double seconds = 0.0;
};

// Checks every differentiable operation plus the three end-to-end
// compositions (prediction network -> corner loss, association network ->
// focal loss, dense-embedding loss) against central differences, `seeds`
// random draws each. Logs one line per case when `log` is given.
GradSuiteResult run_gradient_suite(std::size_t seeds = 20,
                                   std::uint64_t master_seed = 7,
                                   double tol = 1e-4,
                                   std::ostream* log = nullptr);

}  // namespace s3mot
