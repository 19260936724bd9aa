// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "evtrack/losses.hpp"
#include "evtrack/tracker.hpp"

namespace evtrack::config {

/// Everything a run can set from a config file.
struct RunConfig {
  tracker::TrackerConfig tracker;
  /// Pondering-loss schedule (alpha, e, e_start, e_total).
  losses::LossWeights loss;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// `key = value` lines; `#` starts a comment. Unknown keys, duplicate keys
/// and malformed values raise FormatError with the line number.
///
/// Keys: dt_us, patch, embed_dim, heads, mlp_ratio, layers_per_stage (a,b,c),
/// injection_order (d,d,d), tau, alpha, e_start, e_total, dps_start_layer,
/// template_factor, search_factor, head_channels, seed, dps, moe,
/// routing_noise.
RunConfig parse(std::istream& in);
RunConfig parse_string(const std::string& text);
RunConfig load(const std::filesystem::path& path);

/// Applies one assignment; throws FormatError (line 0) on a bad key or value.
void apply(RunConfig& cfg, const std::string& key, const std::string& value);

/// Every key with its current value; parse(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);

}  // namespace evtrack::config
