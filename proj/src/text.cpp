#include "deskqa/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <unordered_set>

namespace deskqa {

namespace {

bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

char lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

const std::unordered_set<std::string_view>& stopwords() {
  static const std::unordered_set<std::string_view> words = {
      "a",      "about",  "above",   "after",  "again", "against", "all",
      "am",     "an",     "and",     "any",    "are",   "as",      "at",
      "be",     "because","been",    "before", "being", "below",   "between",
      "both",   "but",    "by",      "can",    "could", "did",     "do",
      "does",   "doing",  "down",    "during", "each",  "few",     "for",
      "from",   "further","had",     "has",    "have",  "having",  "he",
      "her",    "here",   "hers",    "herself","him",   "himself", "his",
      "how",    "i",      "if",      "in",     "into",  "is",      "it",
      "its",    "itself", "just",    "me",     "more",  "most",    "my",
      "myself", "no",     "nor",     "not",    "now",   "of",      "off",
      "on",     "once",   "only",    "or",     "other", "our",     "ours",
      "ourselves","out",  "over",    "own",    "same",  "she",     "should",
      "so",     "some",   "such",    "than",   "that",  "the",     "their",
      "theirs", "them",   "themselves","then", "there", "these",   "they",
      "this",   "those",  "through", "to",     "too",   "under",   "until",
      "up",     "very",   "was",     "we",     "were",  "what",    "when",
      "where",  "which",  "while",   "who",    "whom",  "why",     "will",
      "with",   "would",  "you",     "your",   "yours", "yourself","yourselves",
      "please", "may",    "might",   "must",
      "shall",  "also",   "s",       "t",
  };
  return words;
}

struct Entity {
  std::string_view name;
  std::string_view text;
};

constexpr std::array<Entity, 7> kEntities = {{
    {"amp", "&"},
    {"lt", "<"},
    {"gt", ">"},
    {"quot", "\""},
    {"apos", "'"},
    {"nbsp", " "},
    {"#39", "'"},
}};

std::string decode_entities(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '&') {
      auto semi = text.find(';', i);
      if (semi != std::string_view::npos && semi - i <= 8) {
        auto name = text.substr(i + 1, semi - i - 1);
        bool matched = false;
        for (const auto& e : kEntities) {
          if (e.name == name) {
            out += e.text;
            matched = true;
            break;
          }
        }
        if (matched) {
          i = semi;
          continue;
        }
      }
    }
    out += text[i];
  }
  return out;
}

struct Tag {
  std::string name;
  bool closing = false;
  bool self_closing = false;
  std::string attrs;
};

// Parses the tag starting at html[pos] == '<'. Returns npos as end when the
// tag is unterminated.
std::size_t parse_tag(std::string_view html, std::size_t pos, Tag& tag) {
  auto close = html.find('>', pos);
  if (close == std::string_view::npos) return std::string_view::npos;
  std::string_view inner = html.substr(pos + 1, close - pos - 1);
  if (!inner.empty() && inner.front() == '/') {
    tag.closing = true;
    inner.remove_prefix(1);
  }
  if (!inner.empty() && inner.back() == '/') {
    tag.self_closing = true;
    inner.remove_suffix(1);
  }
  std::size_t n = 0;
  while (n < inner.size() && (std::isalnum(static_cast<unsigned char>(inner[n])) != 0 || inner[n] == '!' ||
                              inner[n] == '-')) {
    ++n;
  }
  tag.name = casefold(inner.substr(0, n));
  tag.attrs = std::string(inner.substr(n));
  return close + 1;
}

std::string attribute(const std::string& attrs, std::string_view name) {
  std::string lowered = casefold(attrs);
  std::size_t pos = 0;
  while ((pos = lowered.find(name, pos)) != std::string::npos) {
    bool boundary = pos == 0 || is_space(lowered[pos - 1]);
    std::size_t eq = pos + name.size();
    while (eq < lowered.size() && is_space(lowered[eq])) ++eq;
    if (boundary && eq < lowered.size() && lowered[eq] == '=') {
      std::size_t v = eq + 1;
      while (v < attrs.size() && is_space(attrs[v])) ++v;
      if (v < attrs.size() && (attrs[v] == '"' || attrs[v] == '\'')) {
        char quote = attrs[v];
        auto endq = attrs.find(quote, v + 1);
        if (endq == std::string::npos) return {};
        return attrs.substr(v + 1, endq - v - 1);
      }
      std::size_t e = v;
      while (e < attrs.size() && !is_space(attrs[e])) ++e;
      return attrs.substr(v, e - v);
    }
    pos += name.size();
  }
  return {};
}

bool safe_img_src(const std::string& src) {
  if (src.empty()) return false;
  if (starts_with_ci(src, "data:image/")) return true;
  // Relative references only: no scheme, no protocol-relative prefix.
  if (src.rfind("//", 0) == 0) return false;
  auto colon = src.find(':');
  auto slash = src.find('/');
  return colon == std::string::npos || (slash != std::string::npos && slash < colon);
}

const std::unordered_set<std::string_view>& allowed_tags() {
  static const std::unordered_set<std::string_view> tags = {
      "p", "ul", "ol", "li", "table", "tr", "td", "th", "b", "i", "code", "br", "img"};
  return tags;
}

bool is_block_tag(std::string_view name) {
  static const std::unordered_set<std::string_view> tags = {
      "p",  "ul", "ol", "li", "table", "tr", "td", "th", "br", "div", "h1",
      "h2", "h3", "h4", "h5", "h6",    "section", "article", "pre", "blockquote"};
  return tags.count(name) != 0;
}

}  // namespace

std::vector<TokenSpan> tokenize_with_offsets(std::string_view text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && !is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) {
      TokenSpan span;
      span.begin = start;
      span.end = i;
      span.token.reserve(i - start);
      for (std::size_t j = start; j < i; ++j) span.token += lower(text[j]);
      out.push_back(std::move(span));
    }
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (auto& span : tokenize_with_offsets(text)) out.push_back(std::move(span.token));
  return out;
}

std::string casefold(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = lower(c);
  return out;
}

std::string trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && is_space(text[b])) ++b;
  while (e > b && is_space(text[e - 1])) --e;
  return std::string(text.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending = false;
  for (char c : text) {
    if (is_space(c)) {
      pending = !out.empty();
    } else {
      if (pending) out += ' ';
      pending = false;
      out += c;
    }
  }
  return out;
}

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  if (!lines.empty() && lines.back().empty() && !text.empty() && text.back() == '\n') lines.pop_back();
  if (text.empty()) lines.clear();
  return lines;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

bool starts_with_ci(std::string_view text, std::string_view prefix) {
  if (prefix.size() > text.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (lower(text[i]) != lower(prefix[i])) return false;
  }
  return true;
}

std::string title_case(std::string_view text) {
  std::string out(text);
  bool word_start = true;
  for (auto& c : out) {
    if (std::isalpha(static_cast<unsigned char>(c)) != 0) {
      c = word_start ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : lower(c);
      word_start = false;
    } else {
      word_start = is_space(c) || c == '-';
    }
  }
  return out;
}

bool is_stopword(std::string_view token) { return stopwords().count(token) != 0; }

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string flat = collapse_whitespace(text);
  std::size_t start = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    char c = flat[i];
    if (c != '.' && c != '?' && c != '!') continue;
    bool at_end = i + 1 == flat.size();
    if (!at_end && flat[i + 1] != ' ') continue;
    // "e.g. " style abbreviations and decimals are not boundaries.
    if (c == '.' && i >= 1 && i + 2 < flat.size() && std::islower(static_cast<unsigned char>(flat[i + 2])) != 0) {
      continue;
    }
    std::string sentence = trim(std::string_view(flat).substr(start, i + 1 - start));
    if (!sentence.empty()) out.push_back(std::move(sentence));
    start = i + 1;
  }
  std::string rest = trim(std::string_view(flat).substr(std::min(start, flat.size())));
  if (!rest.empty()) out.push_back(std::move(rest));
  return out;
}

std::string sanitize_html(std::string_view html) {
  std::string out;
  out.reserve(html.size());
  std::size_t i = 0;
  int dropping = 0;  // depth inside script/style
  while (i < html.size()) {
    if (html[i] == '<') {
      if (html.substr(i, 4) == "<!--") {
        auto end = html.find("-->", i + 4);
        i = end == std::string_view::npos ? html.size() : end + 3;
        continue;
      }
      Tag tag;
      auto next = parse_tag(html, i, tag);
      if (next == std::string_view::npos) {
        // Unterminated tag: escape the bracket and continue as text.
        if (dropping == 0) out += "&lt;";
        ++i;
        continue;
      }
      i = next;
      if (tag.name == "script" || tag.name == "style") {
        if (tag.closing) {
          dropping = std::max(0, dropping - 1);
        } else if (!tag.self_closing) {
          ++dropping;
        }
        continue;
      }
      if (dropping > 0 || allowed_tags().count(tag.name) == 0) continue;
      if (tag.name == "img") {
        if (tag.closing) continue;
        std::string src = attribute(tag.attrs, "src");
        if (!safe_img_src(src)) continue;
        std::string alt = attribute(tag.attrs, "alt");
        out += "<img src=\"" + html_escape(src) + "\"";
        if (!alt.empty()) out += " alt=\"" + html_escape(alt) + "\"";
        out += ">";
        continue;
      }
      if (tag.name == "br") {
        if (!tag.closing) out += "<br>";
        continue;
      }
      out += tag.closing ? "</" + tag.name + ">" : "<" + tag.name + ">";
      continue;
    }
    if (dropping == 0) {
      char c = html[i];
      if (c == '>') {
        out += "&gt;";
      } else {
        out += c;
      }
    }
    ++i;
  }
  return out;
}

std::string strip_tags(std::string_view html) {
  std::string out;
  std::size_t i = 0;
  int dropping = 0;
  while (i < html.size()) {
    if (html[i] == '<') {
      Tag tag;
      auto next = parse_tag(html, i, tag);
      if (next == std::string_view::npos) {
        if (dropping == 0) out += '<';
        ++i;
        continue;
      }
      if (tag.name == "script" || tag.name == "style") {
        dropping += tag.closing ? -1 : (tag.self_closing ? 0 : 1);
        dropping = std::max(0, dropping);
      }
      if (is_block_tag(tag.name)) out += ' ';
      i = next;
      continue;
    }
    if (dropping == 0) out += html[i];
    ++i;
  }
  return collapse_whitespace(decode_entities(out));
}

std::string html_escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace deskqa
