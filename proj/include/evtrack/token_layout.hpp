// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "evtrack/frame_builder.hpp"

namespace evtrack {

/// Half-open token index range [begin, end).
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

/// Where the template and each injected search block live in the token
/// sequence. Blocks are appended in injection order and never move.
class TokenLayout {
 public:
  TokenLayout(std::size_t template_tokens, std::size_t search_tokens, std::size_t embed_dim);

  /// Appends a search block; throws StateError if the density is already present.
  TokenRange inject(frames::Density d);

  const TokenRange& template_range() const { return template_; }
  std::optional<TokenRange> range(frames::Density d) const;
  const std::vector<frames::Density>& injected() const { return order_; }
  std::size_t injected_count() const { return order_.size(); }
  std::size_t total() const { return total_; }
  std::size_t search_tokens() const { return search_tokens_; }
  std::size_t embed_dim() const { return embed_dim_; }

 private:
  TokenRange template_;
  std::size_t search_tokens_;
  std::size_t embed_dim_;
  std::size_t total_;
  std::array<std::optional<TokenRange>, 3> ranges_;
  std::vector<frames::Density> order_;
};

}  // namespace evtrack
