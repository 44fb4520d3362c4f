// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kvbudget::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kInfeasible = 3 };

/// Runs one command line (without the program name). Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "50%" or "0.5" into a fraction.
double parse_budget(const std::string& text);

/// Shortest round-trip decimal form of a double.
std::string format_number(double value);

}  // namespace kvbudget::cli
