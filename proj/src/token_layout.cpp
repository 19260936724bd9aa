// SPDX-License-Identifier: Apache-2.0
#include "evtrack/token_layout.hpp"

#include <string>

#include "evtrack/error.hpp"

namespace evtrack {

TokenLayout::TokenLayout(std::size_t template_tokens, std::size_t search_tokens, std::size_t embed_dim)
    : template_{0, template_tokens},
      search_tokens_(search_tokens),
      embed_dim_(embed_dim),
      total_(template_tokens) {}

TokenRange TokenLayout::inject(frames::Density d) {
  auto& slot = ranges_[static_cast<std::size_t>(d)];
  if (slot) throw StateError(std::string("density '") + frames::name(d) + "' already injected");
  slot = TokenRange{total_, total_ + search_tokens_};
  total_ += search_tokens_;
  order_.push_back(d);
  return *slot;
}

std::optional<TokenRange> TokenLayout::range(frames::Density d) const {
  return ranges_[static_cast<std::size_t>(d)];
}

}  // namespace evtrack
