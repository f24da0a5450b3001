#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deskqa/store.hpp"

namespace deskqa::ingest {

inline constexpr std::size_t kDefaultMaxChunkTokens = 512;

/// One block of a structured document: either a heading (level 1..6) or a
/// body block holding sanitized rich text (paragraph, list, table, image).
struct Block {
  enum class Kind { Heading, Body };
  Kind kind = Kind::Body;
  int level = 0;     // headings only
  std::string html;  // body blocks only
  std::string text;  // heading text, or the body's plain text

  static Block heading(int level, std::string text);
  static Block body(std::string html);

  bool operator==(const Block&) const = default;
};

struct StructuredDoc {
  std::vector<Block> blocks;
};

/// Parses HTML into headings and top-level body blocks. An unterminated tag,
/// comment or heading raises ParseError whose details hold the byte offset.
StructuredDoc parse_html(std::string_view html);

/// ATX headings, paragraphs, lists, pipe tables, images and inline
/// bold/italic/code. An unterminated code fence raises ParseError with the
/// byte offset of the fence.
StructuredDoc parse_markdown(std::string_view markdown);

/// Heading detection for unformatted text: a short line (fewer than 8
/// tokens) that is title case, all caps or numbered ("2.1 Setup") becomes a
/// heading. Numbered headings nest by depth; all-caps lines are level 1 and
/// title-case lines level 2.
StructuredDoc induce_structure(std::string_view text);

/// One chunk per section with body content. Sections over
/// `max_chunk_tokens` split at block boundaries (oversized blocks at word
/// boundaries) and get "(part k)" appended to their heading path.
std::vector<Chunk> chunk_document(const StructuredDoc& doc, const std::string& source_id,
                                  std::size_t max_chunk_tokens = kDefaultMaxChunkTokens);

struct TimedWord {
  std::string word;
  double start = 0;
  double end = 0;
};

/// Word index ranges [first, last] of transcript sentences. A boundary
/// follows any word ending in . ? or ! and any inter-word pause of at least
/// `gap_threshold` seconds. Throws InvalidArgument on negative, inverted or
/// unordered timestamps.
std::vector<std::pair<std::size_t, std::size_t>> transcript_sentences(const std::vector<TimedWord>& words,
                                                                      double gap_threshold = 0.8);

/// Time-anchored chunks from a timed transcript. Pauses of at least
/// `gap_threshold` always start a new chunk; sentences ended by punctuation
/// are packed together up to `max_chunk_tokens`.
std::vector<Chunk> segment_transcript(const std::vector<TimedWord>& words, const std::string& source_id,
                                      double gap_threshold = 0.8,
                                      std::size_t max_chunk_tokens = kDefaultMaxChunkTokens);

/// JSONL with one {"word","start","end"} object per line.
std::vector<TimedWord> parse_transcript_jsonl(std::string_view text);

struct IncidentRecord {
  std::string id;
  std::string problem_text;
  std::string resolution_text;
};

/// CSV with a header naming the columns id, problem, resolution.
std::vector<IncidentRecord> parse_incidents_csv(std::string_view text);

struct IncidentCluster {
  std::vector<std::string> member_ids;  // input order
  std::string medoid_id;
  std::string question;               // the medoid's problem text
  std::optional<std::string> answer;  // the medoid's resolution, when present
  bool needs_manual_curation = false;
};

/// Single-pass leader clustering on tf-idf cosine: an incident joins the
/// first cluster whose leader is at least `sim_threshold` similar, else it
/// founds a new cluster. The representative is the medoid.
std::vector<IncidentCluster> mine_incidents(const std::vector<IncidentRecord>& incidents,
                                            double sim_threshold = 0.6);

/// Mined answer units "M-<medoid id>" for the clusters that carry a
/// resolution. The other members' problem texts become alternates.
std::vector<AnswerUnit> units_from_clusters(const std::vector<IncidentCluster>& clusters,
                                            const std::vector<IncidentRecord>& incidents);

}  // namespace deskqa::ingest
