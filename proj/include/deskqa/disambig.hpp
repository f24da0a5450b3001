#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deskqa/nlp.hpp"
#include "deskqa/store.hpp"

namespace deskqa::disambig {

struct NounPhrase {
  std::string text;  // lowercase
  std::string head;
  std::vector<std::string> modifiers;

  bool operator==(const NounPhrase&) const = default;
};

struct Concepts {
  std::vector<NounPhrase> noun_phrases;
  std::vector<std::string> verbs;  // lemmas

  bool empty() const { return noun_phrases.empty() && verbs.empty(); }
};

/// Noun phrases by the pattern (Adj|Noun)* Noun and main-verb lemmas.
/// Stopwords are dropped from modifiers.
Concepts extract_concepts(std::string_view question, const nlp::Tagger& tagger = nlp::default_tagger());

enum class ConceptKind { Modifier, Topic, Action };

/// How a clarifying question reads for one slot. `{options}` expands to the
/// option phrases joined as "A or B" / "A, B or C".
struct SlotTemplate {
  std::string text = "Do you need {options}?";
  bool article = true;     // "a"/"an" before each option phrase
  bool title_case = true;  // title-case option phrases inside the text
};

struct SlotEntry {
  std::string key;
  std::string head;
  std::vector<std::string> values;
  SlotTemplate question;
};

/// Groups modifiers of a head noun into named slots ("card-kind" for
/// debit/credit). Modifiers without an entry share a slot named after their
/// head noun.
class AttributeLexicon {
 public:
  static AttributeLexicon builtin();
  static AttributeLexicon from_json(const Json& j);
  static AttributeLexicon load(const std::filesystem::path& path);
  Json to_json() const;

  std::string slot_for(std::string_view head, std::string_view modifier) const;
  const SlotTemplate& template_for(std::string_view slot, ConceptKind kind) const;
  const std::vector<SlotEntry>& entries() const { return entries_; }

 private:
  std::vector<SlotEntry> entries_;
  SlotTemplate modifier_default_;
  SlotTemplate topic_default_{"Is your question about {options}?", false, false};
  SlotTemplate action_default_{"Do you want to {options}?", false, false};
};

/// Shared lexicon that can be swapped from its file at runtime. Readers
/// keep the snapshot they obtained.
class LexiconSource {
 public:
  explicit LexiconSource(AttributeLexicon lexicon = AttributeLexicon::builtin());
  explicit LexiconSource(std::filesystem::path path);

  std::shared_ptr<const AttributeLexicon> current() const;

  /// Reloads when the file changed since the last load. A file that fails
  /// to parse leaves the previous lexicon in place and rethrows.
  bool reload_if_changed();

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const AttributeLexicon> lexicon_;
  std::optional<std::filesystem::path> path_;
  std::filesystem::file_time_type loaded_at_{};
};

struct ConceptNode {
  std::string text;  // case-folded value
  std::string slot;
  std::string head;  // head noun for modifiers, empty otherwise
  ConceptKind kind = ConceptKind::Modifier;

  bool operator==(const ConceptNode&) const = default;
};

struct QuestionNode {
  std::string class_id;
  std::string text;
  bool bare = false;  // no concepts were found

  bool operator==(const QuestionNode&) const = default;
};

struct ConceptGraph {
  std::vector<ConceptNode> concepts;
  std::vector<QuestionNode> questions;
  std::set<std::pair<std::size_t, std::size_t>> edges;  // (concept, question)
  std::set<std::string> consumed;                       // slots already asked

  std::vector<std::size_t> questions_of(std::size_t concept_index) const;
  std::vector<std::size_t> concepts_of(std::size_t question_index) const;
  std::vector<std::string> class_ids() const;

  bool operator==(const ConceptGraph&) const = default;
};

struct Candidate {
  std::string class_id;
  std::string question;
};

std::vector<Candidate> candidates_from(const Snapshot& snapshot, const std::vector<std::string>& class_ids);

ConceptGraph build_graph(const std::vector<Candidate>& candidates,
                         const AttributeLexicon& lexicon = AttributeLexicon::builtin(),
                         const nlp::Tagger& tagger = nlp::default_tagger());

struct ConceptBucket {
  std::string slot;
  ConceptKind kind = ConceptKind::Modifier;
  std::string head;
  std::vector<std::string> options;                 // concept values, first-appearance order
  std::vector<std::vector<std::string>> partition;  // class ids per option

  std::size_t max_cell() const;
  bool operator==(const ConceptBucket&) const = default;
};

/// Every slot with at least two options that jointly cover two questions
/// and whose largest cell is smaller than the node count.
std::vector<ConceptBucket> candidate_buckets(const ConceptGraph& graph, const std::set<std::string>& excluded = {});

/// Smallest largest cell, then fewer options, then slot key.
std::optional<ConceptBucket> best_bucket(const ConceptGraph& graph, const std::set<std::string>& excluded = {});

struct ClarifyingQuestion {
  std::string text;
  std::vector<std::string> options;  // title-cased labels
  ConceptBucket bucket;
};

std::string option_label(const ConceptBucket& bucket, std::size_t option);

ClarifyingQuestion render_question(const ConceptBucket& bucket,
                                   const AttributeLexicon& lexicon = AttributeLexicon::builtin());

/// Index of the option a reply names: a value or label, matched case-folded,
/// or the value appearing as a word of the reply.
std::optional<std::size_t> match_option(const ConceptBucket& bucket, std::string_view reply);

/// Keeps the question nodes linked to the chosen option and marks the slot
/// consumed.
ConceptGraph narrow(const ConceptGraph& graph, const ConceptBucket& bucket, std::string_view chosen);

const char* to_string(ConceptKind kind);

void to_json(Json& j, const ConceptGraph& g);
void from_json(const Json& j, ConceptGraph& g);
void to_json(Json& j, const ConceptBucket& b);
void from_json(const Json& j, ConceptBucket& b);
void to_json(Json& j, const ClarifyingQuestion& q);
void from_json(const Json& j, ClarifyingQuestion& q);

}  // namespace deskqa::disambig
