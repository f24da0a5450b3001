#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace deskqa::nlp {

enum class Pos {
  Noun,
  ProperNoun,
  Pronoun,
  Verb,
  Auxiliary,  // do/does/did and modals
  Copula,
  Adjective,
  Adverb,
  Determiner,
  Preposition,
  Conjunction,
  WhWord,
  Number,
  To,
  Punct,
};

const char* to_string(Pos pos);

enum class VerbForm { None, Base, ThirdSingular, Past, Participle, Gerund };

struct Token {
  std::string text;   // surface form
  std::string lower;  // case-folded surface
  std::size_t begin = 0;  // byte offsets into the tagged sentence
  std::size_t end = 0;
  Pos pos = Pos::Noun;
  std::string lemma;  // verb lemma, otherwise the lowercase form
  VerbForm form = VerbForm::None;

  bool is_nominal() const { return pos == Pos::Noun || pos == Pos::ProperNoun; }
};

/// Word and punctuation tokens with byte offsets. Words keep internal
/// hyphens and apostrophes ("e-mail", "user's").
std::vector<Token> lex(std::string_view sentence);

/// Pluggable part-of-speech tagger.
class Tagger {
 public:
  virtual ~Tagger() = default;
  virtual std::vector<Token> tag(std::string_view sentence) const = 0;
};

/// Closed-class word lists, a verb and adjective lexicon, suffix rules and
/// a few contextual repairs (a verb form after a determiner is a noun or an
/// adjective, and so on). Deterministic and dependency free.
class LexiconTagger final : public Tagger {
 public:
  std::vector<Token> tag(std::string_view sentence) const override;
};

const Tagger& default_tagger();

bool is_known_verb(std::string_view lemma);
bool is_adjective_word(std::string_view word);

/// Lemma of an inflected verb form, or empty when `word` is not a verb form
/// the lexicon knows. `form` receives the detected inflection.
std::string verb_lemma(std::string_view word, VerbForm* form = nullptr);

std::string third_singular(std::string_view lemma);
std::string past_participle(std::string_view lemma);
std::string past_tense(std::string_view lemma);
std::string gerund(std::string_view lemma);

/// Whether a word names a person role ("admin", "user") or is a personal
/// pronoun.
bool is_person_word(std::string_view word);
bool is_location_word(std::string_view word);
bool is_temporal_word(std::string_view word);
bool is_month(std::string_view word);

}  // namespace deskqa::nlp
