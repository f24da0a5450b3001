#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace deskqa {

/// Lowercase, split on non-alphanumerics, drop empty tokens. Every module
/// tokenizes through this function so vocabularies agree.
std::vector<std::string> tokenize(std::string_view text);

/// Tokens with their byte ranges in the source text.
struct TokenSpan {
  std::string token;
  std::size_t begin = 0;
  std::size_t end = 0;
};
std::vector<TokenSpan> tokenize_with_offsets(std::string_view text);

std::string casefold(std::string_view text);
std::string trim(std::string_view text);
std::string collapse_whitespace(std::string_view text);
std::vector<std::string> split_lines(std::string_view text);
std::vector<std::string> split_words(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_ci(std::string_view text, std::string_view prefix);

/// "debit card" -> "Debit Card".
std::string title_case(std::string_view text);

bool is_stopword(std::string_view token);

std::size_t levenshtein(std::string_view a, std::string_view b);

/// Splits running text into sentences at `.`, `?` or `!` followed by
/// whitespace (or end of text).
std::vector<std::string> split_sentences(std::string_view text);

/// Keeps only the rich-text subset answers and chunks may carry: p, ul, ol,
/// li, table, tr, td, th, b, i, code, br and img with a data-URI or relative
/// src. Other tags are dropped (their text content is kept), except script
/// and style whose content is dropped too. Attributes other than img src/alt
/// are removed.
std::string sanitize_html(std::string_view html);

/// Text content of an HTML fragment with entities decoded and block
/// boundaries turned into spaces.
std::string strip_tags(std::string_view html);

std::string html_escape(std::string_view text);

/// FNV-1a, used for stable content-derived identifiers.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

}  // namespace deskqa
