#pragma once

#include <string>
#include <vector>

// Gradient verification in one sweep: central-difference checks for every
// differentiable tensor op, the miniature network end to end, the router's
// straight-through selection (via an affine surrogate that is value- and
// gradient-identical at the expansion point but visible to finite
// differences), and the full training objective on a miniature config.
// A deliberately broken gradient closes the suite as a negative control:
// its entry passes iff the checker FLAGS the mismatch.

namespace bcsi {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradSuiteReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = false;
};

// the objective check costs tens of seconds; everything else is instant
GradSuiteReport run_grad_suite(bool include_objective = true);

// one "PASS/FAIL name err tol" line per entry plus a summary line
std::string format_grad_report(const GradSuiteReport& report);

}  // namespace bcsi
