// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace polysearch {

/// Ordered tokens of one sentence, tagged with its language code.
struct TokenSequence {
  std::string lang;
  std::vector<std::string> tokens;
};

/// Lowercases ASCII, Latin-1, Latin Extended-A, Greek and basic Cyrillic.
/// Other code points and invalid bytes pass through unchanged.
std::string to_lower_utf8(std::string_view text);

/// Lowercase, split on Unicode whitespace, strip leading/trailing punctuation,
/// drop empty tokens.
TokenSequence tokenize(std::string_view text, std::string_view lang);

}  // namespace polysearch
