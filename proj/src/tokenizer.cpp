// SPDX-License-Identifier: Apache-2.0
#include "tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cstdint>

namespace polysearch {
namespace {

struct Decoded {
  char32_t cp;
  std::size_t len;  // 0 = invalid sequence, treat the byte as opaque
};

Decoded decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {b0, 0};
  }
  if (i + len > s.size()) return {b0, 0};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {b0, 0};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len};
}

void encode(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

char32_t lower(char32_t c) {
  if (c >= U'A' && c <= U'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  // Latin Extended-A: upper/lower alternate, with the 0x139..0x148 and
  // 0x179..0x17E runs shifted by one.
  if (c >= 0x100 && c <= 0x137 && c != 0x130) return (c % 2 == 0) ? c + 1 : c;
  if ((c >= 0x139 && c <= 0x148) || (c >= 0x179 && c <= 0x17E)) return (c % 2 == 1) ? c + 1 : c;
  if (c >= 0x14A && c <= 0x177) return (c % 2 == 0) ? c + 1 : c;
  if (c == 0x178) return 0xFF;
  if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 32;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  if (c >= 0x400 && c <= 0x40F) return c + 80;
  return c;
}

bool is_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  static constexpr std::array<char32_t, 12> kLatin1 = {0xA1, 0xA7, 0xAB, 0xB6, 0xB7, 0xBB,
                                                       0xBF, 0xA8, 0xB4, 0xAC, 0xB0, 0xA6};
  if (std::find(kLatin1.begin(), kLatin1.end(), c) != kLatin1.end()) return true;
  if (c >= 0x2010 && c <= 0x2027) return true;  // dashes, quotes, ellipsis
  if (c >= 0x2030 && c <= 0x205E) return true;
  return c >= 0x3001 && c <= 0x3003;
}

}  // namespace

std::string to_lower_utf8(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    const Decoded d = decode(text, i);
    if (d.len == 0) {
      out.push_back(text[i]);
      ++i;
      continue;
    }
    encode(lower(d.cp), out);
    i += d.len;
  }
  return out;
}

TokenSequence tokenize(std::string_view text, std::string_view lang) {
  TokenSequence seq{std::string(lang), {}};
  // Each token is a run of (code point, byte length) pairs so punctuation can
  // be trimmed from either end without re-decoding.
  std::vector<Decoded> current;
  std::vector<std::size_t> offsets;

  auto flush = [&] {
    std::size_t lo = 0;
    std::size_t hi = current.size();
    while (lo < hi && current[lo].len != 0 && is_punct(current[lo].cp)) ++lo;
    while (hi > lo && current[hi - 1].len != 0 && is_punct(current[hi - 1].cp)) --hi;
    if (lo < hi) {
      std::string token;
      for (std::size_t k = lo; k < hi; ++k) {
        if (current[k].len == 0)
          token.push_back(static_cast<char>(current[k].cp));
        else
          encode(lower(current[k].cp), token);
      }
      seq.tokens.push_back(std::move(token));
    }
    current.clear();
  };

  for (std::size_t i = 0; i < text.size();) {
    Decoded d = decode(text, i);
    const std::size_t step = d.len == 0 ? 1 : d.len;
    if (d.len != 0 && is_space(d.cp)) {
      flush();
    } else {
      current.push_back(d);
    }
    i += step;
  }
  flush();
  return seq;
}

}  // namespace polysearch
