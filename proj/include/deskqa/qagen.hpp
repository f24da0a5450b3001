#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deskqa/nlp.hpp"
#include "deskqa/store.hpp"

namespace deskqa::qagen {

// ---- sentence filtering ----

struct TextRankResult {
  std::vector<double> scores;
  int iterations = 0;
};

double textrank_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// Weighted TextRank over the sentence graph. Rows without outgoing weight
/// spread their rank uniformly, so scores always sum to n.
TextRankResult textrank_scores(const std::vector<std::string>& sentences, double damping = 0.85,
                               double tolerance = 1e-4, int max_iterations = 100);

/// Number of sentences kept for `n` inputs at `ratio`.
std::size_t textrank_count(std::size_t n, double ratio);

/// Indices of the top ceil(ratio * n) sentences in original order. Ties go
/// to the earlier sentence.
std::vector<std::size_t> textrank_select_indices(const std::vector<std::string>& sentences, double ratio = 0.10);
std::vector<std::string> textrank_select(const std::vector<std::string>& sentences, double ratio = 0.10);

class Glossary {
 public:
  Glossary() = default;
  explicit Glossary(std::map<std::string, double> terms) : terms_(std::move(terms)) {}

  bool contains(std::string_view term) const { return terms_.find(std::string(term)) != terms_.end(); }
  std::optional<double> score(std::string_view term) const;
  const std::map<std::string, double>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }

  /// Distinct glossary unigrams and bigrams found in `text`.
  std::size_t hits(std::string_view text) const;

 private:
  std::map<std::string, double> terms_;
};

/// Unigrams and bigrams without stopwords, scored by their best tf-idf over
/// the chunks; the `top_m` best (ties by term) are kept.
Glossary build_glossary(const std::vector<Chunk>& chunks, std::size_t top_m = 200);

/// "the following table", "figure below" and similar references to
/// material next to the sentence.
bool is_mention_sentence(std::string_view sentence);

// ---- simplification and frames ----

std::vector<std::string> simplify(std::string_view sentence, const nlp::Tagger& tagger = nlp::default_tagger());

enum class Role { Agent, Patient, CopulaSubject, CopulaComplement, Location, Temporal, Manner };
enum class EntityClass { Person, Org, Location, Time, Other };
enum class FrameKind { Event, Copula, Passive, Definition, Process, Mention };
enum class Tense { Present, Past };

const char* to_string(Role role);
const char* to_string(EntityClass cls);
const char* to_string(FrameKind kind);

struct Frame {
  FrameKind kind = FrameKind::Event;
  std::string predicate;  // verb lemma
  std::map<Role, std::string> arguments;
  std::string source_sentence;
  std::map<std::string, EntityClass> entity_class;
  Tense tense = Tense::Present;
  bool plural_subject = false;

  const std::string* argument(Role role) const;
  EntityClass class_of(Role role) const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

void to_json(Json& j, const Frame& f);

std::vector<Frame> extract_frames(std::string_view sentence, const nlp::Tagger& tagger = nlp::default_tagger());

EntityClass classify_entity(std::string_view span, const nlp::Tagger& tagger = nlp::default_tagger());

// ---- question formation ----

struct GeneratedQuestion {
  std::string text;
  std::string answer_span;
  std::string rule_id;
  std::string source_chunk_id;
  std::string source_sentence;
  double score = 0.0;

  friend bool operator==(const GeneratedQuestion&, const GeneratedQuestion&) = default;
};

void to_json(Json& j, const GeneratedQuestion& q);
void from_json(const Json& j, GeneratedQuestion& q);

enum class AgentConstraint { Any, Person, NonPerson };

/// One row of the question rule table. Placeholders: {subject},
/// {complement}, {agent}, {patient}, {temporal}, {location}, {manner},
/// {predicate-base}, {predicate-3sg} (the past form for past-tense frames),
/// {do} (do/does/did by agreement) and {who-what} (by the agent's class).
struct Rule {
  std::string id;
  std::vector<FrameKind> kinds;
  std::vector<Role> required;
  AgentConstraint agent = AgentConstraint::Any;
  std::optional<bool> plural;
  std::string question_template;
  Role answer = Role::Patient;
};

const std::vector<Rule>& default_rules();
std::vector<Rule> rules_from_json(const Json& j);
Json rules_to_json(const std::vector<Rule>& rules);

std::vector<GeneratedQuestion> form_questions(const Frame& frame, const std::vector<Rule>& rules = default_rules());

// ---- filtering and pipeline ----

/// Keeps questions of 4 to 20 tokens that have a noun besides the wh-word,
/// at least one glossary term and no case-folded duplicate earlier in the
/// list. Scores are the share of {6..12 tokens, >= 2 nouns, >= 2 glossary
/// hits} met.
std::vector<GeneratedQuestion> filter_questions(const std::vector<GeneratedQuestion>& questions,
                                                const Glossary& glossary,
                                                const nlp::Tagger& tagger = nlp::default_tagger());

struct PipelineOptions {
  double ratio = 0.10;
  std::size_t glossary_size = 200;
};

/// Sentences are selected per chunk. Mention sentences are always kept.
std::vector<GeneratedQuestion> generate(const std::vector<Chunk>& chunks, const PipelineOptions& options = {},
                                        const nlp::Tagger& tagger = nlp::default_tagger());

}  // namespace deskqa::qagen
