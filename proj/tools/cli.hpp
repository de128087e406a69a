// Copyright 2026 The QMoP Projector Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef QMOP_TOOLS_CLI_HPP
#define QMOP_TOOLS_CLI_HPP

#include <iosfwd>

namespace qmop::cli {

// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kDimensionMismatch = 3,
  kVerificationFailed = 4,
  kDiverged = 5,
};

// Entry point shared by the qmop binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qmop::cli

#endif  // QMOP_TOOLS_CLI_HPP
