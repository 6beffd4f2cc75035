// Copyright 2026 The DuoVoce Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <iosfwd>
#include <vector>

#include "duovoce/verify.hpp"

namespace duovoce::cli {

enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,
  kUsageError = 2,
  kNumericalError = 3,
  kVerificationFailed = 4,
};

// Entry point of the `duovoce` binary. Human-readable output goes to `out`
// and diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err);

// Runs `checks`, prints one line per op and returns kOk or
// kVerificationFailed, naming each failing op on `err`.
int report_gradcheck(const std::vector<OpCheck>& checks, std::ostream& out,
                     std::ostream& err);

}  // namespace duovoce::cli
