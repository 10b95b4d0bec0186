// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of every loss and of the full objective
// through the latent generator, on small random instances.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lta {

struct GradCheckResult {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

/// Runs sft, align, focus and total checks; each on `instances` random
/// instances derived from `seed`.
std::vector<GradCheckResult> run_gradchecks(std::uint64_t seed, int instances, double h = 1e-5, double tol = 1e-4);

}  // namespace lta
