#include "deskqa/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <regex>
#include <set>

#include "deskqa/error.hpp"
#include "deskqa/retrieval.hpp"
#include "deskqa/text.hpp"

namespace deskqa::ingest {

namespace {

[[noreturn]] void parse_error(std::size_t offset, const std::string& what) {
  throw Error(ErrorCode::ParseError, what + " at byte offset " + std::to_string(offset), std::to_string(offset));
}

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::size_t find_ci(std::string_view haystack, std::string_view needle, std::size_t from) {
  if (needle.empty()) return from;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    if (starts_with_ci(haystack.substr(i), needle)) return i;
  }
  return std::string_view::npos;
}

const std::set<std::string, std::less<>> kBlockTags = {"p", "ul", "ol", "table", "pre", "blockquote", "figure", "dl"};
const std::set<std::string, std::less<>> kInlineTags = {"b", "i", "code", "span", "a", "strong", "em", "u", "br",
                                                        "small", "sup", "sub", "mark", "font"};
const std::set<std::string, std::less<>> kSkipTags = {"head", "script", "style", "title", "noscript", "template"};
const std::set<std::string, std::less<>> kRenderableTop = {"p", "ul", "ol", "table"};

std::string tag_name(std::string_view inner, bool& closing) {
  closing = !inner.empty() && inner.front() == '/';
  if (closing) inner.remove_prefix(1);
  std::size_t n = 0;
  while (n < inner.size() && std::isalnum(static_cast<unsigned char>(inner[n])) != 0) ++n;
  return casefold(inner.substr(0, n));
}

std::size_t token_count_of(std::string_view html) { return tokenize(strip_tags(html)).size(); }

std::string chunk_id(const std::string& source_id, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return source_id + "#" + buf;
}

// Markdown inline markup on already-escaped text.
std::string markdown_inline(const std::string& raw) {
  static const std::regex image(R"(!\[([^\]]*)\]\(([^)\s]+)\))");
  static const std::regex link(R"(\[([^\]]+)\]\(([^)\s]+)\))");
  static const std::regex bold(R"(\*\*([^*]+)\*\*)");
  static const std::regex italic(R"((^|[^*\w])[*_]([^*_]+)[*_])");
  static const std::regex code("`([^`]+)`");
  std::string s = html_escape(raw);
  s = std::regex_replace(s, image, "<img src=\"$2\" alt=\"$1\">");
  s = std::regex_replace(s, link, "$1");
  s = std::regex_replace(s, bold, "<b>$1</b>");
  s = std::regex_replace(s, italic, "$1<i>$2</i>");
  s = std::regex_replace(s, code, "<code>$1</code>");
  return s;
}

}  // namespace

Block Block::heading(int level, std::string text) {
  Block b;
  b.kind = Kind::Heading;
  b.level = std::clamp(level, 1, 6);
  b.text = collapse_whitespace(text);
  return b;
}

Block Block::body(std::string html) {
  Block b;
  b.kind = Kind::Body;
  b.html = sanitize_html(html);
  b.text = strip_tags(b.html);
  return b;
}

StructuredDoc parse_html(std::string_view html) {
  StructuredDoc doc;
  std::string pending;  // loose inline content outside any block
  std::string block;
  std::string block_tag;
  int depth = 0;

  auto flush_pending = [&] {
    if (!trim(strip_tags(pending)).empty()) doc.blocks.push_back(Block::body("<p>" + trim(pending) + "</p>"));
    pending.clear();
  };
  auto emit_block = [&] {
    std::string clean = sanitize_html(block);
    if (!trim(strip_tags(clean)).empty() || clean.find("<img") != std::string::npos) {
      if (kRenderableTop.count(block_tag) == 0) clean = "<p>" + clean + "</p>";
      doc.blocks.push_back(Block::body(clean));
    }
    block.clear();
    block_tag.clear();
  };

  std::size_t i = 0;
  while (i < html.size()) {
    if (html[i] != '<') {
      (depth > 0 ? block : pending) += html[i];
      ++i;
      continue;
    }
    if (html.substr(i, 4) == "<!--") {
      auto end = html.find("-->", i + 4);
      if (end == std::string_view::npos) parse_error(i, "unterminated comment");
      i = end + 3;
      continue;
    }
    auto close = html.find('>', i);
    if (close == std::string_view::npos) parse_error(i, "unterminated tag");
    if (html.substr(i, 2) == "<!" || html.substr(i, 2) == "<?") {
      i = close + 1;
      continue;
    }
    std::string_view raw = html.substr(i, close - i + 1);
    bool closing = false;
    std::string name = tag_name(html.substr(i + 1, close - i - 1), closing);
    if (name.empty()) {
      (depth > 0 ? block : pending) += "&lt;";
      ++i;
      continue;
    }

    if (kSkipTags.count(name) != 0) {
      if (!closing) {
        auto end = find_ci(html, "</" + name, close + 1);
        if (end == std::string_view::npos) parse_error(i, "unterminated <" + name + ">");
        auto end_close = html.find('>', end);
        if (end_close == std::string_view::npos) parse_error(end, "unterminated tag");
        i = end_close + 1;
      } else {
        i = close + 1;
      }
      continue;
    }

    if (name.size() == 2 && name[0] == 'h' && name[1] >= '1' && name[1] <= '6') {
      if (closing) {
        i = close + 1;
        continue;
      }
      if (depth > 0) {
        // A heading inside an open block ends that block.
        emit_block();
        depth = 0;
      }
      flush_pending();
      auto end = find_ci(html, "</" + name, close + 1);
      if (end == std::string_view::npos) parse_error(i, "unterminated <" + name + ">");
      auto end_close = html.find('>', end);
      if (end_close == std::string_view::npos) parse_error(end, "unterminated tag");
      doc.blocks.push_back(Block::heading(name[1] - '0', strip_tags(html.substr(close + 1, end - close - 1))));
      i = end_close + 1;
      continue;
    }

    if (name == "img" && depth == 0) {
      flush_pending();
      std::string clean = sanitize_html(raw);
      if (!clean.empty()) doc.blocks.push_back(Block::body(clean));
      i = close + 1;
      continue;
    }

    if (kBlockTags.count(name) != 0) {
      if (!closing) {
        if (depth == 0) {
          flush_pending();
          block_tag = name;
        } else if (name == "p" && block_tag == "p" && depth == 1) {
          // Implicitly closed paragraph.
          block += "</p>";
          emit_block();
          depth = 0;
          block_tag = name;
        }
        ++depth;
        block += raw;
      } else if (depth > 0) {
        block += raw;
        if (--depth == 0) emit_block();
      }
      i = close + 1;
      continue;
    }

    if (depth > 0) {
      block += raw;
    } else if (kInlineTags.count(name) != 0) {
      pending += raw;
    } else {
      flush_pending();  // structural container such as div or section
    }
    i = close + 1;
  }
  if (depth > 0) emit_block();
  flush_pending();
  return doc;
}

StructuredDoc parse_markdown(std::string_view markdown) {
  StructuredDoc doc;
  static const std::regex heading_re(R"(^(#{1,6})\s+(.*?)\s*#*\s*$)");
  static const std::regex bullet_re(R"(^\s*[-*+]\s+(.*)$)");
  static const std::regex ordered_re(R"(^\s*\d+[.)]\s+(.*)$)");
  static const std::regex image_re(R"(^\s*!\[([^\]]*)\]\(([^)\s]+)\)\s*$)");

  std::vector<std::string> para;
  std::vector<std::string> items;
  std::string list_kind;
  std::vector<std::vector<std::string>> rows;

  auto flush = [&] {
    if (!para.empty()) {
      doc.blocks.push_back(Block::body("<p>" + markdown_inline(join(para, " ")) + "</p>"));
      para.clear();
    }
    if (!items.empty()) {
      std::string html = "<" + list_kind + ">";
      for (const auto& it : items) html += "<li>" + markdown_inline(it) + "</li>";
      html += "</" + list_kind + ">";
      doc.blocks.push_back(Block::body(html));
      items.clear();
    }
    if (!rows.empty()) {
      std::string html = "<table>";
      for (const auto& r : rows) {
        html += "<tr>";
        for (const auto& cell : r) html += "<td>" + markdown_inline(trim(cell)) + "</td>";
        html += "</tr>";
      }
      html += "</table>";
      doc.blocks.push_back(Block::body(html));
      rows.clear();
    }
  };

  std::size_t pos = 0;
  while (pos < markdown.size()) {
    std::size_t nl = markdown.find('\n', pos);
    if (nl == std::string_view::npos) nl = markdown.size();
    std::string line(markdown.substr(pos, nl - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t line_start = pos;
    pos = nl + 1;

    std::smatch m;
    std::string t = trim(line);
    if (t.rfind("```", 0) == 0) {
      flush();
      std::vector<std::string> code;
      bool closed = false;
      while (pos < markdown.size()) {
        std::size_t e = markdown.find('\n', pos);
        if (e == std::string_view::npos) e = markdown.size();
        std::string l(markdown.substr(pos, e - pos));
        pos = e + 1;
        if (trim(l).rfind("```", 0) == 0) {
          closed = true;
          break;
        }
        code.push_back(l);
      }
      if (!closed) parse_error(line_start, "unterminated code fence");
      doc.blocks.push_back(Block::body("<p><code>" + html_escape(join(code, "\n")) + "</code></p>"));
      continue;
    }
    if (t.empty()) {
      flush();
    } else if (std::regex_match(line, m, heading_re)) {
      flush();
      doc.blocks.push_back(Block::heading(static_cast<int>(m[1].length()), m[2].str()));
    } else if (std::regex_match(line, m, image_re)) {
      flush();
      doc.blocks.push_back(Block::body("<img src=\"" + m[2].str() + "\" alt=\"" + m[1].str() + "\">"));
    } else if (t.front() == '|') {
      if (!para.empty() || !items.empty()) flush();
      std::string inner = t.substr(1);
      if (!inner.empty() && inner.back() == '|') inner.pop_back();
      if (std::regex_match(inner, std::regex(R"(^[\s|:-]+$)"))) continue;  // separator row
      std::vector<std::string> cells;
      std::size_t s = 0;
      while (true) {
        auto bar = inner.find('|', s);
        cells.push_back(inner.substr(s, bar == std::string::npos ? std::string::npos : bar - s));
        if (bar == std::string::npos) break;
        s = bar + 1;
      }
      rows.push_back(std::move(cells));
    } else if (std::regex_match(line, m, bullet_re) || std::regex_match(line, m, ordered_re)) {
      const std::string kind = std::regex_match(line, bullet_re) ? "ul" : "ol";
      if (!para.empty() || !rows.empty() || (!items.empty() && kind != list_kind)) flush();
      list_kind = kind;
      items.push_back(m[1].str());
    } else {
      if (!items.empty() || !rows.empty()) flush();
      para.push_back(t);
    }
  }
  flush();
  return doc;
}

StructuredDoc induce_structure(std::string_view text) {
  static const std::regex numbered(R"(^(\d+(?:\.\d+)*)\.?\s+(\S.*)$)");
  static const std::set<std::string, std::less<>> small_words = {"a",  "an", "the", "of",   "and", "or",
                                                                 "for", "to", "in", "on", "with", "at", "by"};
  StructuredDoc doc;
  std::vector<std::string> para;
  auto flush = [&] {
    if (!para.empty()) doc.blocks.push_back(Block::body("<p>" + html_escape(join(para, " ")) + "</p>"));
    para.clear();
  };

  for (const auto& raw : split_lines(text)) {
    const std::string line = trim(raw);
    if (line.empty()) {
      flush();
      continue;
    }
    const auto tokens = tokenize(line);
    int level = 0;
    const char last = line.back();
    const bool sentence_like = last == '.' || last == ',' || last == ';' || last == ':' || last == '?' || last == '!';
    if (!tokens.empty() && tokens.size() < 8) {
      std::smatch m;
      bool has_alpha = false;
      bool has_lower = false;
      for (char c : line) {
        has_alpha = has_alpha || is_alpha(c);
        has_lower = has_lower || std::islower(static_cast<unsigned char>(c)) != 0;
      }
      if (std::regex_match(line, m, numbered) && !sentence_like) {
        const std::string number = m[1].str();
        level = 1 + static_cast<int>(std::count(number.begin(), number.end(), '.'));
      } else if (has_alpha && !has_lower && !sentence_like) {
        level = 1;
      } else if (!sentence_like) {
        bool title = true;
        int words = 0;
        for (const auto& w : split_words(line)) {
          if (!is_alpha(w.front())) continue;
          ++words;
          if (std::isupper(static_cast<unsigned char>(w.front())) == 0 && (words == 1 || small_words.count(w) == 0)) {
            title = false;
            break;
          }
        }
        if (title && words > 0) level = 2;
      }
    }
    if (level > 0) {
      flush();
      doc.blocks.push_back(Block::heading(std::min(level, 6), line));
    } else {
      para.push_back(line);
    }
  }
  flush();
  return doc;
}

std::vector<Chunk> chunk_document(const StructuredDoc& doc, const std::string& source_id,
                                  std::size_t max_chunk_tokens) {
  if (max_chunk_tokens == 0) throw Error(ErrorCode::InvalidArgument, "max_chunk_tokens must be positive");
  std::vector<Chunk> chunks;
  std::vector<std::pair<int, std::string>> heading_stack;
  std::vector<const Block*> section;

  auto split_oversized = [&](const Block& b) {
    // Word-boundary pieces of a block whose text alone exceeds the limit.
    std::vector<std::string> pieces;
    std::vector<std::string> current;
    std::size_t count = 0;
    for (const auto& w : split_words(b.text)) {
      std::size_t n = tokenize(w).size();
      if (count + n > max_chunk_tokens && !current.empty()) {
        pieces.push_back("<p>" + html_escape(join(current, " ")) + "</p>");
        current.clear();
        count = 0;
      }
      current.push_back(w);
      count += n;
    }
    if (!current.empty()) pieces.push_back("<p>" + html_escape(join(current, " ")) + "</p>");
    return pieces;
  };

  auto flush_section = [&] {
    if (section.empty()) return;
    std::vector<std::string> path;
    for (const auto& [level, text] : heading_stack) path.push_back(text);

    // Greedy packing of block html under the token limit.
    std::vector<std::pair<std::vector<std::string>, std::size_t>> parts;
    std::vector<std::string> current;
    std::size_t count = 0;
    auto push_part = [&] {
      if (!current.empty()) parts.emplace_back(current, count);
      current.clear();
      count = 0;
    };
    for (const Block* b : section) {
      std::size_t n = token_count_of(b->html);
      if (n > max_chunk_tokens) {
        push_part();
        for (auto& piece : split_oversized(*b)) {
          std::size_t pn = token_count_of(piece);
          if (count + pn > max_chunk_tokens) push_part();
          current.push_back(std::move(piece));
          count += pn;
        }
        continue;
      }
      if (count + n > max_chunk_tokens) push_part();
      current.push_back(b->html);
      count += n;
    }
    push_part();

    for (std::size_t k = 0; k < parts.size(); ++k) {
      Chunk c;
      c.id = chunk_id(source_id, chunks.size());
      c.source_id = source_id;
      c.heading_path = path;
      if (parts.size() > 1) c.heading_path.push_back("(part " + std::to_string(k + 1) + ")");
      c.body = join(parts[k].first, "\n");
      c.token_count = parts[k].second;
      chunks.push_back(std::move(c));
    }
    section.clear();
  };

  for (const auto& b : doc.blocks) {
    if (b.kind == Block::Kind::Heading) {
      flush_section();
      while (!heading_stack.empty() && heading_stack.back().first >= b.level) heading_stack.pop_back();
      heading_stack.emplace_back(b.level, b.text);
    } else if (!trim(b.text).empty() || b.html.find("<img") != std::string::npos) {
      section.push_back(&b);
    }
  }
  flush_section();
  return chunks;
}

std::vector<std::pair<std::size_t, std::size_t>> transcript_sentences(const std::vector<TimedWord>& words,
                                                                      double gap_threshold) {
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    if (w.start < 0 || w.end < w.start) {
      throw Error(ErrorCode::InvalidArgument, "word " + std::to_string(i) + " has invalid timestamps",
                  std::to_string(i));
    }
    if (i > 0 && (w.start < words[i - 1].start || w.start < words[i - 1].end)) {
      throw Error(ErrorCode::InvalidArgument, "transcript words are not time-ordered at word " + std::to_string(i),
                  std::to_string(i));
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> sentences;
  std::size_t first = 0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i].word;
    const bool final_token = !w.empty() && (w.back() == '.' || w.back() == '?' || w.back() == '!');
    const bool pause = i + 1 < words.size() && words[i + 1].start - words[i].end >= gap_threshold;
    if (final_token || pause || i + 1 == words.size()) {
      sentences.emplace_back(first, i);
      first = i + 1;
    }
  }
  return sentences;
}

std::vector<Chunk> segment_transcript(const std::vector<TimedWord>& words, const std::string& source_id,
                                      double gap_threshold, std::size_t max_chunk_tokens) {
  const auto sentences = transcript_sentences(words, gap_threshold);
  std::vector<Chunk> chunks;
  std::size_t chunk_first = 0;
  std::size_t chunk_last = 0;
  std::size_t count = 0;
  bool open = false;

  auto emit = [&] {
    if (!open) return;
    std::vector<std::string> text;
    for (std::size_t i = chunk_first; i <= chunk_last; ++i) text.push_back(words[i].word);
    Chunk c;
    c.id = chunk_id(source_id, chunks.size());
    c.source_id = source_id;
    c.body = html_escape(join(text, " "));
    c.token_count = count;
    double start = words[chunk_first].start;
    double end = words[chunk_last].end;
    if (end <= start) end = start + 1e-3;  // zero-length words still get a valid anchor
    c.time_anchor = TimeAnchor{start, end};
    chunks.push_back(std::move(c));
    open = false;
    count = 0;
  };

  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const auto [first, last] = sentences[s];
    std::size_t n = 0;
    for (std::size_t i = first; i <= last; ++i) n += tokenize(words[i].word).size();
    const bool after_pause = s > 0 && words[first].start - words[sentences[s - 1].second].end >= gap_threshold;
    if (open && (after_pause || count + n > max_chunk_tokens)) emit();
    if (!open) {
      chunk_first = first;
      open = true;
    }
    chunk_last = last;
    count += n;
    // A single sentence longer than the limit is cut at word boundaries.
    while (count > max_chunk_tokens) {
      std::size_t acc = 0;
      std::size_t cut = chunk_first;
      while (cut <= chunk_last && acc + tokenize(words[cut].word).size() <= max_chunk_tokens) {
        acc += tokenize(words[cut].word).size();
        ++cut;
      }
      if (cut == chunk_first) cut = chunk_first + 1;
      const std::size_t keep_last = chunk_last;
      chunk_last = cut - 1;
      std::size_t tail = count - acc;
      count = acc;
      emit();
      if (cut > keep_last) break;
      chunk_first = cut;
      chunk_last = keep_last;
      count = tail;
      open = true;
    }
  }
  emit();
  return chunks;
}

std::vector<TimedWord> parse_transcript_jsonl(std::string_view text) {
  std::vector<TimedWord> words;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      Json j = Json::parse(line);
      words.push_back(TimedWord{j.at("word").get<std::string>(), j.at("start").get<double>(), j.at("end").get<double>()});
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError, "transcript line " + std::to_string(line_no) + ": " + e.what(),
                  std::to_string(line_no));
    }
  }
  return words;
}

std::vector<IncidentRecord> parse_incidents_csv(std::string_view text) {
  // RFC 4180: quoted fields may hold commas, doubled quotes and newlines.
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
      if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
      row.clear();
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted CSV field");
  if (field_started || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return {};

  int id_col = -1, problem_col = -1, resolution_col = -1;
  for (std::size_t c = 0; c < rows[0].size(); ++c) {
    const std::string name = casefold(trim(rows[0][c]));
    if (name == "id") id_col = static_cast<int>(c);
    if (name == "problem") problem_col = static_cast<int>(c);
    if (name == "resolution") resolution_col = static_cast<int>(c);
  }
  if (id_col < 0 || problem_col < 0) {
    throw Error(ErrorCode::ParseError, "incident CSV needs id and problem columns");
  }
  std::vector<IncidentRecord> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    auto cell = [&](int c) { return c >= 0 && static_cast<std::size_t>(c) < cells.size() ? trim(cells[c]) : std::string(); };
    IncidentRecord rec{cell(id_col), cell(problem_col), cell(resolution_col)};
    if (rec.problem_text.empty()) {
      throw Error(ErrorCode::InvalidArgument, "incident " + rec.id + " has an empty problem", std::to_string(r + 1));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<IncidentCluster> mine_incidents(const std::vector<IncidentRecord>& incidents, double sim_threshold) {
  if (incidents.empty()) throw Error(ErrorCode::InvalidArgument, "no incidents to mine");
  std::vector<std::vector<std::string>> docs;
  docs.reserve(incidents.size());
  for (const auto& inc : incidents) {
    if (trim(inc.problem_text).empty()) {
      throw Error(ErrorCode::InvalidArgument, "incident " + inc.id + " has an empty problem", inc.id);
    }
    docs.push_back(tokenize(inc.problem_text));
  }
  const auto vectorizer = TfidfVectorizer::fit(docs);
  std::vector<SparseVector> vecs;
  vecs.reserve(docs.size());
  for (const auto& d : docs) vecs.push_back(vectorizer.transform(d));

  std::vector<std::vector<std::size_t>> clusters;  // member indices; front is the leader
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    bool placed = false;
    for (auto& members : clusters) {
      if (dot(vecs[members.front()], vecs[i]) >= sim_threshold) {
        members.push_back(i);
        placed = true;
        break;
      }
    }
    if (!placed) clusters.push_back({i});
  }

  std::vector<IncidentCluster> out;
  out.reserve(clusters.size());
  for (const auto& members : clusters) {
    std::size_t medoid = members.front();
    double best = -1;
    for (std::size_t a : members) {
      double sum = 0;
      for (std::size_t b : members) {
        if (a != b) sum += dot(vecs[a], vecs[b]);
      }
      const double mean = members.size() > 1 ? sum / static_cast<double>(members.size() - 1) : 1.0;
      if (mean > best) {
        best = mean;
        medoid = a;
      }
    }
    IncidentCluster c;
    for (std::size_t m : members) c.member_ids.push_back(incidents[m].id);
    c.medoid_id = incidents[medoid].id;
    c.question = incidents[medoid].problem_text;
    if (!trim(incidents[medoid].resolution_text).empty()) {
      c.answer = incidents[medoid].resolution_text;
    } else {
      c.needs_manual_curation = true;
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<AnswerUnit> units_from_clusters(const std::vector<IncidentCluster>& clusters,
                                            const std::vector<IncidentRecord>& incidents) {
  std::map<std::string, const IncidentRecord*> by_id;
  for (const auto& r : incidents) by_id.emplace(r.id, &r);
  std::vector<AnswerUnit> units;
  for (const auto& c : clusters) {
    if (c.needs_manual_curation || !c.answer) continue;
    AnswerUnit u;
    u.id = "M-" + c.medoid_id;
    u.primary_question = collapse_whitespace(trim(c.question));
    u.answer = "<p>" + html_escape(trim(*c.answer)) + "</p>";
    u.source = UnitSource::Mined;
    std::set<std::string> seen = {casefold(u.primary_question)};
    for (const auto& id : c.member_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) continue;
      std::string q = collapse_whitespace(trim(it->second->problem_text));
      if (!q.empty() && seen.insert(casefold(q)).second) u.alternate_questions.push_back(std::move(q));
    }
    units.push_back(std::move(u));
  }
  return units;
}

}  // namespace deskqa::ingest
