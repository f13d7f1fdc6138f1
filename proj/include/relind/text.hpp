#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace relind {

// Slot and blank markers. They survive tokenization as single tokens.
inline constexpr std::string_view kHeadMarker = "[HEAD]";
inline constexpr std::string_view kTailMarker = "[TAIL]";
inline constexpr std::string_view kMaskMarker = "[MASK]";

inline bool is_marker(std::string_view token) {
  return token == kHeadMarker || token == kTailMarker || token == kMaskMarker;
}

inline bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t j = 1; j < len; ++j) {
      const auto cc = static_cast<unsigned char>(s[i + j]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (static_cast<unsigned char>(c) < 0x80) {
      c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  return out;
}

namespace detail {

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline bool is_ascii_punct(unsigned char c) {
  return c < 0x80 && std::ispunct(c) != 0;
}

// Case-insensitive match of a marker at position i.
inline std::string_view marker_at(std::string_view text, std::size_t i) {
  for (auto marker : {kHeadMarker, kTailMarker, kMaskMarker}) {
    if (text.size() - i < marker.size()) continue;
    bool match = true;
    for (std::size_t j = 0; j < marker.size(); ++j) {
      if (std::toupper(static_cast<unsigned char>(text[i + j])) != marker[j]) {
        match = false;
        break;
      }
    }
    if (match) return marker;
  }
  return {};
}

}  // namespace detail

/// Lowercases and splits on whitespace and ASCII punctuation; each
/// punctuation character becomes its own token. Bytes >= 0x80 are word
/// characters, so UTF-8 words stay intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (detail::is_ascii_space(c)) {
      flush();
    } else if (c == '[' && !detail::marker_at(text, i).empty()) {
      flush();
      const auto marker = detail::marker_at(text, i);
      tokens.emplace_back(marker);
      i += marker.size() - 1;
    } else if (detail::is_ascii_punct(c)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else if (c < 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      current.push_back(static_cast<char>(c));
    }
  }
  flush();
  return tokens;
}

/// Splits running text after '.', '!' or '?' when followed by whitespace or
/// the end of the text. Terminal punctuation stays with its sentence.
inline std::vector<std::string_view> split_sentences(std::string_view text) {
  std::vector<std::string_view> sentences;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    auto s = text.substr(start, end - start);
    while (!s.empty() && detail::is_ascii_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && detail::is_ascii_space(s.back())) s.remove_suffix(1);
    if (!s.empty()) sentences.push_back(s);
    start = end;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '!' || c == '?') &&
        (i + 1 == text.size() ||
         detail::is_ascii_space(static_cast<unsigned char>(text[i + 1])))) {
      emit(i + 1);
    }
  }
  emit(text.size());
  return sentences;
}

/// One sentence per line, for pre-segmented corpora.
inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline std::string join(const std::vector<std::string>& tokens,
                        std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace relind
