// SPDX-License-Identifier: Apache-2.0
// Prints one PASS/FAIL line per acceptance criterion; exit status 1 on any failure.

#include <iostream>

#include "evtrack/checks.hpp"

int main() {
  evtrack::checks::CheckOptions opt;
  bool ok = true;
  evtrack::checks::run_acceptance(opt, [&](const evtrack::checks::CheckResult& r) {
    std::cout << evtrack::checks::format(r) << std::endl;
    ok = ok && r.passed;
  });
  std::cout << (ok ? "acceptance: 10/10 criteria passed" : "acceptance: FAILED") << std::endl;
  return ok ? 0 : 1;
}
