#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace annot {

/// A word token with byte offsets into the source line.
struct WordToken {
  std::string lower;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool break_before = false;  // sentence/clause punctuation precedes this token
};

/// Whitespace + punctuation splitting. Letters, digits, apostrophes and any
/// non-ASCII byte form words; everything else separates them.
std::vector<WordToken> tokenize_words(std::string_view line);

/// Escapes &, < and > so record text cannot open or close prompt tags.
std::string xml_escape(std::string_view s);
/// xml_escape plus " for attribute values.
std::string xml_escape_attr(std::string_view s);
std::string xml_unescape(std::string_view s);

}  // namespace annot
