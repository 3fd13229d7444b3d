#include "annot/text.hpp"

#include <cctype>

namespace annot {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c == '\'' || c >= 0x80;
}

}  // namespace

std::vector<WordToken> tokenize_words(std::string_view line) {
  std::vector<WordToken> out;
  std::size_t i = 0;
  bool pending_break = false;
  while (i < line.size()) {
    while (i < line.size() && !is_word_byte(static_cast<unsigned char>(line[i]))) {
      const char c = line[i];
      if (c == '.' || c == '!' || c == '?' || c == ';' || c == ':') pending_break = true;
      ++i;
    }
    if (i >= line.size()) break;
    std::size_t b = i;
    while (i < line.size() && is_word_byte(static_cast<unsigned char>(line[i]))) ++i;
    // Leading/trailing apostrophes are quotation marks, not part of the word.
    std::size_t wb = b;
    std::size_t we = i;
    while (wb < we && line[wb] == '\'') ++wb;
    while (we > wb && line[we - 1] == '\'') --we;
    if (wb == we) continue;
    WordToken t;
    t.begin = wb;
    t.end = we;
    t.break_before = pending_break;
    pending_break = false;
    t.lower.reserve(we - wb);
    for (std::size_t k = wb; k < we; ++k) {
      t.lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(line[k]))));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string xml_escape_attr(std::string_view s) {
  std::string out;
  for (char c : xml_escape(s)) {
    if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

std::string xml_unescape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '&') {
      if (s.substr(i, 4) == "&lt;") { out.push_back('<'); i += 3; continue; }
      if (s.substr(i, 4) == "&gt;") { out.push_back('>'); i += 3; continue; }
      if (s.substr(i, 5) == "&amp;") { out.push_back('&'); i += 4; continue; }
      if (s.substr(i, 6) == "&quot;") { out.push_back('"'); i += 5; continue; }
    }
    out.push_back(s[i]);
  }
  return out;
}

}  // namespace annot
