// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "evtrack/model_config.hpp"

namespace evtrack::checks {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct CheckOptions {
  std::uint64_t seed = 0x5eed;
  /// Sets every expert's output bias to the full b2 instead of b2 / 3.
  bool mutate_bias_split = false;
  /// Segments of the synthetic sequence used by the end-to-end checks.
  std::size_t sequence_frames = 50;
  /// Segments of the sequence used by the efficiency check.
  std::size_t efficiency_frames = 20;
  ModelConfig model;
};

CheckResult ffn_partition(const CheckOptions& opt);        // 1
CheckResult dps_normalization(const CheckOptions& opt);    // 2
CheckResult ponder_schedule(const CheckOptions& opt);      // 3
CheckResult window_nesting(const CheckOptions& opt);       // 4
CheckResult token_accounting(const CheckOptions& opt);     // 5
CheckResult routing_validity(const CheckOptions& opt);     // 6
CheckResult loss_gradients(const CheckOptions& opt);       // 7
CheckResult end_to_end(const CheckOptions& opt);           // 8
CheckResult metric_oracle(const CheckOptions& opt);        // 9
CheckResult dps_efficiency(const CheckOptions& opt);       // 10

/// Criteria 1..10 in order; `on_result` sees each result as it completes.
std::vector<CheckResult> run_acceptance(const CheckOptions& opt,
                                        const std::function<void(const CheckResult&)>& on_result = {});

/// Passes when criterion 1 fails under the b2 mutation.
CheckResult mutation_detected(const CheckOptions& opt);
/// Passes when flipping a payload byte or a shape byte of a saved weight
/// file makes loading fail.
CheckResult corruption_detected(const CheckOptions& opt);

/// `PASS  3 ponder_schedule (0.001 s): detail`
std::string format(const CheckResult& r);

}  // namespace evtrack::checks
