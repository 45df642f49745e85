#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace anchorcloth {

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
  bool ok = false;
};

// Finite-difference audit of every differentiable operation, each loss term,
// and one end-to-end window forward. `uncovered` lists registered operations
// no case exercises; the report only passes when it is empty.
struct GradCheckReport {
  std::vector<GradCheckRow> rows;
  std::vector<std::string> uncovered;
  double threshold = 1e-4;
  bool all_ok = false;
};

// corrupt_op, when set to a row name, perturbs that case's analytic gradient
// before comparison, so the harness can prove the checker catches a broken
// backward pass.
GradCheckReport run_gradcheck(uint64_t seed, const std::string& corrupt_op = "");

}  // namespace anchorcloth
