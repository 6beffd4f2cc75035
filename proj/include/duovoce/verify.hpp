// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Finite-difference gradient suite over every differentiable op, run in
// double precision on toy shapes. Shared by `duovoce gradcheck` and the
// acceptance checks.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "duovoce/tensor.hpp"

namespace duovoce {

inline constexpr double kGradCheckTolerance = 1e-3;

struct OpCheck {
  std::string module;
  std::string op;
  std::function<GradCheckResult()> run;
};

struct OpCheckOutcome {
  std::string module;
  std::string op;
  GradCheckResult result;
  double seconds = 0.0;
  bool passed = false;
  std::string error;  // set when the check threw
};

// "tensor", "spectral", "complex_nn", "ddccrn", "losses".
const std::vector<std::string>& gradcheck_modules();
// One module or "all". Throws std::invalid_argument for an unknown name.
std::vector<OpCheck> gradcheck_suite(const std::string& module);
// Runs checks in order. A check that throws counts as failed with an
// infinite error.
std::vector<OpCheckOutcome> run_checks(const std::vector<OpCheck>& checks,
                                       double tolerance = kGradCheckTolerance);

}  // namespace duovoce
