#include "deskqa/qagen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "deskqa/error.hpp"
#include "deskqa/retrieval.hpp"
#include "deskqa/text.hpp"

namespace deskqa::qagen {

using nlp::Pos;
using nlp::Token;
using nlp::VerbForm;

// ---------------------------------------------------------------- TextRank

double textrank_similarity(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.size() < 2 || b.size() < 2) return 0.0;
  std::set<std::string_view> sa(a.begin(), a.end());
  std::size_t shared = 0;
  for (std::string_view t : std::set<std::string_view>(b.begin(), b.end())) shared += sa.count(t);
  if (shared == 0) return 0.0;
  return static_cast<double>(shared) /
         (std::log(static_cast<double>(a.size())) + std::log(static_cast<double>(b.size())));
}

TextRankResult textrank_scores(const std::vector<std::string>& sentences, double damping, double tolerance,
                               int max_iterations) {
  const std::size_t n = sentences.size();
  TextRankResult result;
  result.scores.assign(n, 1.0);
  if (n == 0) return result;

  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(n);
  for (const auto& s : sentences) tokens.push_back(tokenize(s));

  std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = textrank_similarity(tokens[i], tokens[j]);
      w[i][j] = w[j][i] = s;
      out[i] += s;
      out[j] += s;
    }
  }

  std::vector<double> next(n);
  auto& score = result.scores;
  for (int it = 0; it < max_iterations; ++it) {
    double dangling = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (out[j] == 0.0) dangling += score[j];
    }
    double delta = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double in = dangling / static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        if (w[j][i] != 0.0) in += w[j][i] / out[j] * score[j];
      }
      next[i] = (1.0 - damping) + damping * in;
      delta = std::max(delta, std::abs(next[i] - score[i]));
    }
    score.swap(next);
    result.iterations = it + 1;
    if (delta < tolerance) break;
  }
  return result;
}

std::size_t textrank_count(std::size_t n, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "ratio must be in (0, 1]");
  }
  if (n == 0) return 0;
  // The epsilon keeps 0.1 * 70 = 7.000000000000001 from rounding up to 8.
  auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

std::vector<std::size_t> textrank_select_indices(const std::vector<std::string>& sentences, double ratio) {
  const std::size_t k = textrank_count(sentences.size(), ratio);
  const auto scores = textrank_scores(sentences).scores;
  std::vector<std::size_t> order(sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::string> textrank_select(const std::vector<std::string>& sentences, double ratio) {
  std::vector<std::string> out;
  for (std::size_t i : textrank_select_indices(sentences, ratio)) out.push_back(sentences[i]);
  return out;
}

// ---------------------------------------------------------------- glossary

namespace {

bool glossary_token(const std::string& t) {
  if (is_stopword(t)) return false;
  return std::any_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)) == 0; });
}

std::vector<std::string> glossary_terms(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!glossary_token(tokens[i])) continue;
    out.push_back(tokens[i]);
    if (i + 1 < tokens.size() && glossary_token(tokens[i + 1])) out.push_back(tokens[i] + " " + tokens[i + 1]);
  }
  return out;
}

}  // namespace

std::optional<double> Glossary::score(std::string_view term) const {
  auto it = terms_.find(std::string(term));
  if (it == terms_.end()) return std::nullopt;
  return it->second;
}

std::size_t Glossary::hits(std::string_view text) const {
  std::set<std::string> found;
  for (auto& t : glossary_terms(tokenize(text))) {
    if (terms_.count(t) != 0) found.insert(std::move(t));
  }
  return found.size();
}

Glossary build_glossary(const std::vector<Chunk>& chunks, std::size_t top_m) {
  if (chunks.empty()) throw Error(ErrorCode::InvalidArgument, "empty corpus");
  std::vector<std::map<std::string, std::size_t>> counts(chunks.size());
  std::map<std::string, std::size_t> df;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    for (auto& t : glossary_terms(tokenize(strip_tags(chunks[c].body)))) ++counts[c][std::move(t)];
    for (const auto& [t, n] : counts[c]) ++df[t];
  }
  std::map<std::string, double> best;
  for (const auto& doc : counts) {
    for (const auto& [t, n] : doc) {
      const double s = TfidfVectorizer::tf(n) * TfidfVectorizer::idf(chunks.size(), df[t]);
      auto [it, fresh] = best.emplace(t, s);
      if (!fresh) it->second = std::max(it->second, s);
    }
  }
  std::vector<std::pair<std::string, double>> ranked(best.begin(), best.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > top_m) ranked.resize(top_m);
  return Glossary(std::map<std::string, double>(ranked.begin(), ranked.end()));
}

namespace {

const std::unordered_set<std::string_view> kMentionNouns = {"table", "tables", "figure", "figures", "chart",
                                                             "charts", "diagram", "diagrams", "screenshot",
                                                             "image"};
const std::unordered_set<std::string_view> kMentionMarkers = {"following", "above", "below", "preceding"};

}  // namespace

bool is_mention_sentence(std::string_view sentence) {
  const auto t = tokenize(sentence);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (kMentionNouns.count(t[i]) == 0) continue;
    if (i > 0 && kMentionMarkers.count(t[i - 1]) != 0 && t[i - 1] != "below") return true;
    if (i + 1 < t.size() && (t[i + 1] == "below" || t[i + 1] == "above")) return true;
  }
  return false;
}

// ---------------------------------------------------------------- shared token helpers

namespace {

struct Span {
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive
};

std::string span_text(std::string_view sentence, const std::vector<Token>& t, Span s) {
  return std::string(sentence.substr(t[s.first].begin, t[s.last].end - t[s.first].begin));
}

std::size_t content_end(const std::vector<Token>& t) {
  std::size_t n = t.size();
  while (n > 0 && t[n - 1].pos == Pos::Punct) --n;
  return n;
}

bool is_finite(const Token& t, const Token* prev) {
  if (t.pos == Pos::Copula) return t.lower != "be" && t.lower != "been" && t.lower != "being";
  if (t.pos == Pos::Auxiliary) return true;
  if (t.pos != Pos::Verb) return false;
  if (t.form == VerbForm::ThirdSingular || t.form == VerbForm::Past) return true;
  return t.form == VerbForm::Base && prev != nullptr && (prev->is_nominal() || prev->pos == Pos::Pronoun);
}

bool np_start(Pos p) {
  return p == Pos::Determiner || p == Pos::Pronoun || p == Pos::Noun || p == Pos::ProperNoun ||
         p == Pos::Adjective || p == Pos::Number;
}

// Finite clause: starts like a noun phrase and has a nominal followed by a
// finite verb.
bool finite_clause(const std::vector<Token>& t) {
  const std::size_t n = content_end(t);
  if (n == 0 || !np_start(t[0].pos)) return false;
  bool subject = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i].is_nominal() || t[i].pos == Pos::Pronoun) {
      subject = true;
      continue;
    }
    if (subject && is_finite(t[i], i > 0 ? &t[i - 1] : nullptr)) return true;
  }
  return false;
}

// Noun phrase starting at i, extended through "of" attachments. Returns the
// inclusive end index or npos.
std::size_t parse_np(const std::vector<Token>& t, std::size_t i, std::size_t end) {
  if (i >= end) return std::string::npos;
  if (t[i].pos == Pos::Pronoun) return i;
  std::size_t j = i;
  if (t[j].pos == Pos::Determiner) ++j;
  std::size_t last = std::string::npos;
  while (j < end) {
    const Pos p = t[j].pos;
    if (p == Pos::Adjective || p == Pos::Number || p == Pos::Noun || p == Pos::ProperNoun) {
      if (p != Pos::Adjective) last = j;
      ++j;
      continue;
    }
    break;
  }
  if (last == std::string::npos) return std::string::npos;
  if (last + 2 < end && t[last + 1].lower == "of") {
    auto tail = parse_np(t, last + 2, end);
    if (tail != std::string::npos) return tail;
  }
  return last;
}

std::string terminate(std::string s) {
  s = trim(s);
  while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';' || s.back() == '!')) s.pop_back();
  s = trim(s);
  if (s.empty()) return s;
  return s + ".";
}

}  // namespace

// ---------------------------------------------------------------- simplification

namespace {

std::vector<std::string> split_relative(std::string_view sentence, const nlp::Tagger& tagger) {
  const std::string lower = casefold(sentence);
  for (std::string_view marker : {std::string_view(", which "), std::string_view(", who ")}) {
    const auto at = lower.find(marker);
    if (at == std::string::npos || at == 0) continue;
    const std::string head = trim(sentence.substr(0, at));
    const std::size_t vp_begin = at + marker.size();
    const auto close = sentence.find(',', vp_begin);
    const std::string vp = trim(sentence.substr(vp_begin, close == std::string::npos ? std::string_view::npos
                                                                                      : close - vp_begin));
    const std::string rest = close == std::string::npos ? std::string() : trim(sentence.substr(close + 1));
    if (vp.empty()) continue;

    const auto head_tokens = tagger.tag(head);
    if (!finite_clause(head_tokens)) {
      // "X, which VP, REST." relativizes the subject.
      if (terminate(rest).empty()) continue;
      return {terminate(head + " " + vp), terminate(head + " " + rest)};
    }
    // "... NP, which VP." relativizes the last noun phrase of the clause.
    const std::size_t n = content_end(head_tokens);
    std::size_t np_first = std::string::npos;
    for (std::size_t i = 0; i < n; ++i) {
      if (parse_np(head_tokens, i, n) == n - 1) {
        np_first = i;
        break;
      }
    }
    if (np_first == std::string::npos) continue;
    const std::string antecedent = span_text(head, head_tokens, {np_first, n - 1});
    std::string main = rest.empty() ? head : head + " " + rest;
    return {terminate(main), terminate(antecedent + " " + vp)};
  }
  return {};
}

std::vector<std::string> split_conjunction(std::string_view sentence, const nlp::Tagger& tagger) {
  const auto t = tagger.tag(sentence);
  const std::size_t n = content_end(t);
  int depth = 0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (t[i].text == "(") ++depth;
    if (t[i].text == ")") --depth;
    if (depth != 0 || t[i].pos != Pos::Conjunction) continue;
    if (t[i].lower != "and" && t[i].lower != "but" && t[i].lower != "or" && t[i].lower != "so" && t[i].lower != "yet") {
      continue;
    }
    std::string left = trim(sentence.substr(0, t[i].begin));
    if (!left.empty() && left.back() == ',') left.pop_back();
    const std::string right = trim(sentence.substr(t[i].end));
    if (finite_clause(tagger.tag(left)) && finite_clause(tagger.tag(right))) {
      return {terminate(left), terminate(right)};
    }
  }
  return {};
}

void simplify_into(const std::string& sentence, const nlp::Tagger& tagger, int depth, std::vector<std::string>& out) {
  if (depth < 4) {
    auto parts = split_relative(sentence, tagger);
    if (parts.empty()) parts = split_conjunction(sentence, tagger);
    if (!parts.empty()) {
      for (const auto& p : parts) simplify_into(p, tagger, depth + 1, out);
      return;
    }
  }
  out.push_back(sentence);
}

}  // namespace

std::vector<std::string> simplify(std::string_view sentence, const nlp::Tagger& tagger) {
  const std::string s = trim(sentence);
  if (s.empty()) return {};
  std::vector<std::string> out;
  simplify_into(s, tagger, 0, out);
  return out;
}

// ---------------------------------------------------------------- frames

const char* to_string(Role role) {
  switch (role) {
    case Role::Agent: return "agent";
    case Role::Patient: return "patient";
    case Role::CopulaSubject: return "copula_subject";
    case Role::CopulaComplement: return "copula_complement";
    case Role::Location: return "location";
    case Role::Temporal: return "temporal";
    case Role::Manner: return "manner";
  }
  return "?";
}

const char* to_string(EntityClass cls) {
  switch (cls) {
    case EntityClass::Person: return "person";
    case EntityClass::Org: return "org";
    case EntityClass::Location: return "location";
    case EntityClass::Time: return "time";
    case EntityClass::Other: return "other";
  }
  return "?";
}

const char* to_string(FrameKind kind) {
  switch (kind) {
    case FrameKind::Event: return "event";
    case FrameKind::Copula: return "copula";
    case FrameKind::Passive: return "passive";
    case FrameKind::Definition: return "definition";
    case FrameKind::Process: return "process";
    case FrameKind::Mention: return "mention";
  }
  return "?";
}

namespace {

const char* to_string(AgentConstraint a) {
  switch (a) {
    case AgentConstraint::Any: return "any";
    case AgentConstraint::Person: return "person";
    case AgentConstraint::NonPerson: return "non_person";
  }
  return "?";
}

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const E (&values)[N], const char* what) {
  for (E v : values) {
    if (s == to_string(v)) return v;
  }
  throw Error(ErrorCode::ParseError, std::string("unknown ") + what + ": " + s, s);
}

constexpr Role kRoles[] = {Role::Agent,    Role::Patient,  Role::CopulaSubject, Role::CopulaComplement,
                           Role::Location, Role::Temporal, Role::Manner};
constexpr FrameKind kKinds[] = {FrameKind::Event,      FrameKind::Copula,  FrameKind::Passive,
                                FrameKind::Definition, FrameKind::Process, FrameKind::Mention};

}  // namespace

const std::string* Frame::argument(Role role) const {
  auto it = arguments.find(role);
  return it == arguments.end() || it->second.empty() ? nullptr : &it->second;
}

EntityClass Frame::class_of(Role role) const {
  const auto* span = argument(role);
  if (span == nullptr) return EntityClass::Other;
  auto it = entity_class.find(*span);
  return it == entity_class.end() ? EntityClass::Other : it->second;
}

void to_json(Json& j, const Frame& f) {
  Json args = Json::object();
  for (const auto& [role, span] : f.arguments) args[to_string(role)] = span;
  Json classes = Json::object();
  for (const auto& [span, cls] : f.entity_class) classes[span] = to_string(cls);
  j = Json{{"kind", to_string(f.kind)},
           {"predicate", f.predicate},
           {"arguments", args},
           {"source_sentence", f.source_sentence},
           {"entity_class", classes},
           {"tense", f.tense == Tense::Past ? "past" : "present"}};
}

EntityClass classify_entity(std::string_view span, const nlp::Tagger& tagger) {
  const auto t = tagger.tag(span);
  const std::size_t n = content_end(t);
  if (n == 0) return EntityClass::Other;
  std::size_t head = std::string::npos;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i].is_nominal() || t[i].pos == Pos::Pronoun) head = i;
  }
  if (head != std::string::npos && nlp::is_person_word(t[head].lower)) return EntityClass::Person;

  bool month = false;
  bool digits = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (nlp::is_temporal_word(t[i].lower)) return EntityClass::Time;
    month = month || nlp::is_month(t[i].lower);
    digits = digits || t[i].pos == Pos::Number;
  }
  if (month && digits) return EntityClass::Time;
  if (head != std::string::npos && nlp::is_location_word(t[head].lower)) return EntityClass::Location;

  std::size_t capitalized = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t[i].pos == Pos::Determiner || t[i].pos == Pos::Punct) continue;
    if (std::isupper(static_cast<unsigned char>(t[i].text.front())) != 0) ++capitalized;
  }
  if (capitalized >= 2) {
    static const std::unordered_set<std::string_view> titles = {"mr", "mrs", "ms", "dr", "prof"};
    return titles.count(t[0].lower) != 0 ? EntityClass::Person : EntityClass::Org;
  }
  return EntityClass::Other;
}

namespace {

const std::unordered_set<std::string_view> kTemporalPreps = {"in",    "on",    "at",     "during", "before",
                                                             "after", "by",    "until",  "since",  "within"};
const std::unordered_set<std::string_view> kLocationPreps = {"in",   "at",   "on",     "from",  "inside",
                                                             "into", "near", "within", "under", "onto"};
const std::unordered_set<std::string_view> kMannerPreps = {"by", "using", "via", "through"};

bool np_is_temporal(const std::vector<Token>& t, std::size_t first, std::size_t last) {
  bool month = false;
  for (std::size_t i = first; i <= last; ++i) {
    if (nlp::is_temporal_word(t[i].lower)) return true;
    month = month || nlp::is_month(t[i].lower);
  }
  return month;
}

bool np_is_location(const std::vector<Token>& t, std::size_t first, std::size_t last) {
  for (std::size_t i = first; i <= last; ++i) {
    if (nlp::is_location_word(t[i].lower) || t[i].pos == Pos::ProperNoun) return true;
  }
  return false;
}

class FrameBuilder {
 public:
  FrameBuilder(std::string_view sentence, const nlp::Tagger& tagger)
      : sentence_(sentence), tagger_(tagger), t_(tagger.tag(sentence)), n_(content_end(t_)) {}

  std::vector<Frame> build() {
    if (n_ == 0) return {};
    if (n_ < t_.size() && t_[n_].text == "?") return {};
    std::size_t verb = std::string::npos;
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& w = t_[i].lower;
      if (w == "not" || w == "never" || w == "cannot" || w.find("n't") != std::string::npos) return {};
      if (verb == std::string::npos && (t_[i].pos == Pos::Verb || t_[i].pos == Pos::Copula)) verb = i;
    }
    if (verb == std::string::npos) return {};

    if (is_mention_sentence(sentence_)) return finish(mention());
    if (t_[0].pos == Pos::To) return finish(process());

    std::size_t start = 0;
    for (std::size_t i = 0; i < verb; ++i) {
      if (t_[i].text == ",") start = i + 1;
    }
    Frame f;
    if (start > 0) scan_adjuncts(f, 0, start - 1);

    // Auxiliaries and adverbs between subject and main verb.
    std::size_t v = start;
    while (v < n_ && t_[v].pos != Pos::Verb && t_[v].pos != Pos::Copula && t_[v].pos != Pos::Auxiliary) ++v;
    if (v >= n_) return {};
    std::size_t subject_end = v;  // exclusive
    bool past = false;
    while (v < n_ && (t_[v].pos == Pos::Auxiliary || t_[v].pos == Pos::Adverb)) {
      if (t_[v].lower == "did") past = true;
      ++v;
    }
    if (v >= n_ || (t_[v].pos != Pos::Verb && t_[v].pos != Pos::Copula)) return {};

    std::optional<Span> subject;
    {
      std::size_t s = start;
      while (s < subject_end && (t_[s].pos == Pos::Adverb || t_[s].pos == Pos::Conjunction)) ++s;
      if (s < subject_end && np_start(t_[s].pos)) {
        bool has_head = false;
        for (std::size_t i = s; i < subject_end; ++i) has_head = has_head || t_[i].is_nominal() || t_[i].pos == Pos::Pronoun;
        if (has_head) subject = Span{s, subject_end - 1};
      }
    }

    if (t_[v].pos == Pos::Copula) return finish(copula(std::move(f), subject, v));

    f.predicate = t_[v].lemma;
    f.tense = past || t_[v].form == VerbForm::Past ? Tense::Past : Tense::Present;
    if (f.predicate == "mean" && subject && v + 1 < n_) {
      f.kind = FrameKind::Definition;
      set(f, Role::Agent, *subject);
      set(f, Role::Patient, {v + 1, n_ - 1});
      return finish(std::move(f));
    }
    f.kind = FrameKind::Event;
    if (subject) set(f, Role::Agent, *subject);
    std::size_t after = v + 1;
    auto np = parse_np(t_, after, n_);
    if (np != std::string::npos) {
      set(f, Role::Patient, {after, np});
      after = np + 1;
    }
    if (after < n_) scan_adjuncts(f, after, n_ - 1);
    f.plural_subject = subject && plural(*subject);
    return finish(std::move(f));
  }

 private:
  std::string text(Span s) const { return span_text(sentence_, t_, s); }

  void set(Frame& f, Role role, Span s) const {
    if (s.last < s.first) return;
    f.arguments[role] = text(s);
  }

  bool plural(Span s) const {
    for (std::size_t i = s.first; i <= s.last; ++i) {
      const auto& w = t_[i].lower;
      if (w == "we" || w == "they" || w == "these" || w == "those" || w == "you" || w == "i") return true;
    }
    std::size_t head = s.last;
    while (head > s.first && !t_[head].is_nominal()) --head;
    const auto& w = t_[head].lower;
    return t_[head].is_nominal() && w.size() > 3 && w.back() == 's' && !w.ends_with("ss") && !w.ends_with("us") &&
           !w.ends_with("is");
  }

  void scan_adjuncts(Frame& f, std::size_t from, std::size_t last) const {
    for (std::size_t i = from; i <= last && i < n_; ++i) {
      const auto& w = t_[i].lower;
      if (t_[i].pos == Pos::Preposition || w == "using") {
        auto np = parse_np(t_, i + 1, last + 1);
        if (np == std::string::npos) continue;
        Span s{i, np};
        if (kTemporalPreps.count(w) != 0 && np_is_temporal(t_, i + 1, np)) {
          if (!f.argument(Role::Temporal)) set(f, Role::Temporal, s);
        } else if (kLocationPreps.count(w) != 0 && np_is_location(t_, i + 1, np)) {
          if (!f.argument(Role::Location)) set(f, Role::Location, s);
        } else if (kMannerPreps.count(w) != 0) {
          if (!f.argument(Role::Manner)) set(f, Role::Manner, s);
        }
        i = np;
        continue;
      }
      if ((w == "every" || w == "each") && i + 1 <= last && nlp::is_temporal_word(t_[i + 1].lower)) {
        if (!f.argument(Role::Temporal)) set(f, Role::Temporal, {i, i + 1});
        ++i;
        continue;
      }
      if ((w == "daily" || w == "weekly" || w == "monthly" || w == "yearly" || w == "annually" || w == "today" ||
           w == "tomorrow" || w == "yesterday") &&
          t_[i].pos != Pos::Noun) {
        if (!f.argument(Role::Temporal)) set(f, Role::Temporal, {i, i});
      }
    }
  }

  std::optional<Frame> copula(Frame f, std::optional<Span> subject, std::size_t v) {
    if (!subject) return std::nullopt;
    const bool past = t_[v].lower == "was" || t_[v].lower == "were";
    f.tense = past ? Tense::Past : Tense::Present;
    std::size_t next = v + 1;
    while (next < n_ && t_[next].pos == Pos::Adverb) ++next;
    if (next >= n_) return std::nullopt;
    const Token& nt = t_[next];
    const bool participle = nt.pos == Pos::Verb && nt.form != VerbForm::Gerund &&
                            (nt.form == VerbForm::Past || nt.form == VerbForm::Participle ||
                             nlp::past_participle(nt.lemma) == nt.lower);
    if (nt.pos == Pos::Verb && nt.form == VerbForm::Gerund) {
      f.kind = FrameKind::Event;
      f.predicate = nt.lemma;
      set(f, Role::Agent, *subject);
      std::size_t after = next + 1;
      auto np = parse_np(t_, after, n_);
      if (np != std::string::npos) {
        set(f, Role::Patient, {after, np});
        after = np + 1;
      }
      if (after < n_) scan_adjuncts(f, after, n_ - 1);
      f.plural_subject = plural(*subject);
      return f;
    }
    if (participle) {
      f.kind = FrameKind::Passive;
      f.predicate = nt.lemma;
      set(f, Role::Patient, *subject);
      for (std::size_t i = next + 1; i < n_; ++i) {
        if (t_[i].lower != "by") continue;
        auto np = parse_np(t_, i + 1, n_);
        if (np != std::string::npos && !np_is_temporal(t_, i + 1, np)) {
          set(f, Role::Agent, {i + 1, np});
          break;
        }
      }
      if (next + 1 < n_) scan_adjuncts(f, next + 1, n_ - 1);
      if (f.argument(Role::Agent)) f.arguments.erase(Role::Manner);
      f.plural_subject = plural(*subject);
      return f;
    }
    bool nominal = false;
    for (std::size_t i = v + 1; i < n_; ++i) nominal = nominal || t_[i].is_nominal();
    if (!nominal) return std::nullopt;
    f.kind = FrameKind::Copula;
    f.predicate = "be";
    set(f, Role::CopulaSubject, *subject);
    set(f, Role::CopulaComplement, {v + 1, n_ - 1});
    f.plural_subject = t_[v].lower == "are" || t_[v].lower == "were";
    return f;
  }

  std::optional<Frame> mention() {
    std::size_t noun = std::string::npos;
    for (std::size_t i = 0; i < n_ && noun == std::string::npos; ++i) {
      if (kMentionNouns.count(t_[i].lower) != 0) noun = i;
    }
    if (noun == std::string::npos) return std::nullopt;
    std::size_t first = noun;
    while (first > 0 && (t_[first - 1].pos == Pos::Determiner || t_[first - 1].pos == Pos::Adjective ||
                         kMentionMarkers.count(t_[first - 1].lower) != 0)) {
      --first;
    }
    std::size_t last = noun;
    if (last + 1 < n_ && (t_[last + 1].lower == "below" || t_[last + 1].lower == "above")) ++last;

    Frame f;
    f.kind = FrameKind::Mention;
    f.predicate = "describe";
    set(f, Role::Agent, {first, last});
    f.plural_subject = t_[noun].lower.back() == 's';
    std::size_t v = last + 1;
    if (v < n_ && (t_[v].pos == Pos::Verb || t_[v].pos == Pos::Copula)) {
      f.predicate = t_[v].lemma;
      if (v + 1 < n_) set(f, Role::Patient, {v + 1, n_ - 1});
    }
    if (!f.argument(Role::Patient)) set(f, Role::Patient, {0, n_ - 1});
    return f;
  }

  std::optional<Frame> process() {
    if (n_ < 3) return std::nullopt;
    const Token& verb = t_[1];
    std::string lemma = verb.pos == Pos::Verb ? verb.lemma : std::string();
    if (lemma.empty() && nlp::is_known_verb(verb.lower)) lemma = verb.lower;
    if (lemma.empty()) return std::nullopt;
    std::size_t comma = std::string::npos;
    for (std::size_t i = 2; i < n_; ++i) {
      if (t_[i].text == ",") {
        comma = i;
        break;
      }
    }
    if (comma == std::string::npos || comma + 1 >= n_) return std::nullopt;
    Frame f;
    f.kind = FrameKind::Process;
    f.predicate = lemma;
    if (comma > 2) set(f, Role::Patient, {2, comma - 1});
    set(f, Role::Manner, {comma + 1, n_ - 1});
    return f;
  }

  std::vector<Frame> finish(std::optional<Frame> f) const {
    if (!f || f->arguments.empty()) return {};
    f->source_sentence = std::string(sentence_);
    for (const auto& [role, span] : f->arguments) f->entity_class[span] = classify_entity(span, tagger_);
    return {std::move(*f)};
  }

  std::string_view sentence_;
  const nlp::Tagger& tagger_;
  std::vector<Token> t_;
  std::size_t n_;
};

}  // namespace

std::vector<Frame> extract_frames(std::string_view sentence, const nlp::Tagger& tagger) {
  return FrameBuilder(sentence, tagger).build();
}

// ---------------------------------------------------------------- question rules

const std::vector<Rule>& default_rules() {
  using K = FrameKind;
  using R = Role;
  static const std::vector<Rule> rules = {
      {"R1", {K::Copula}, {R::CopulaSubject, R::CopulaComplement}, AgentConstraint::Any, false,
       "What is {subject}?", R::CopulaComplement},
      {"R2", {K::Event}, {R::Agent, R::Patient}, AgentConstraint::Person, std::nullopt,
       "Who {predicate-3sg} {patient}?", R::Agent},
      {"R3", {K::Event}, {R::Agent, R::Patient}, AgentConstraint::NonPerson, std::nullopt,
       "What {predicate-3sg} {patient}?", R::Agent},
      {"R4", {K::Event}, {R::Agent, R::Patient}, AgentConstraint::Any, std::nullopt,
       "What {do} {agent} {predicate-base}?", R::Patient},
      {"R5", {K::Event}, {R::Agent, R::Temporal}, AgentConstraint::Any, std::nullopt,
       "When {do} {agent} {predicate-base} {patient}?", R::Temporal},
      {"R6", {K::Event}, {R::Agent, R::Location}, AgentConstraint::Any, std::nullopt,
       "Where {do} {agent} {predicate-base} {patient}?", R::Location},
      {"R7", {K::Event}, {R::Agent, R::Manner}, AgentConstraint::Any, std::nullopt,
       "How {do} {agent} {predicate-base} {patient}?", R::Manner},
      {"R8", {K::Mention}, {R::Agent, R::Patient}, AgentConstraint::Any, std::nullopt,
       "What {do} {agent} describe?", R::Patient},
      {"R9", {K::Copula}, {R::CopulaSubject, R::CopulaComplement}, AgentConstraint::Any, true,
       "What are {subject}?", R::CopulaComplement},
      {"R10", {K::Passive}, {R::Agent, R::Patient}, AgentConstraint::Any, std::nullopt,
       "{who-what} {predicate-3sg} {patient}?", R::Agent},
      {"R11", {K::Definition}, {R::Agent, R::Patient}, AgentConstraint::Any, std::nullopt,
       "What {do} {agent} mean?", R::Patient},
      {"R12", {K::Process}, {R::Manner}, AgentConstraint::Any, std::nullopt,
       "How do you {predicate-base} {patient}?", R::Manner},
  };
  return rules;
}

namespace {

const std::set<std::string>& known_placeholders() {
  static const std::set<std::string> names = {"subject",  "complement", "agent",          "patient",
                                              "temporal", "location",   "manner",         "predicate-base",
                                              "predicate-3sg", "do",    "who-what"};
  return names;
}

void check_template(const std::string& tpl) {
  for (std::size_t i = tpl.find('{'); i != std::string::npos; i = tpl.find('{', i + 1)) {
    const auto close = tpl.find('}', i);
    if (close == std::string::npos) throw Error(ErrorCode::ParseError, "unterminated placeholder in " + tpl, tpl);
    const std::string name = tpl.substr(i + 1, close - i - 1);
    if (known_placeholders().count(name) == 0) {
      throw Error(ErrorCode::ParseError, "unknown placeholder {" + name + "}", name);
    }
  }
}

}  // namespace

std::vector<Rule> rules_from_json(const Json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ParseError, "rule table must be an array");
  std::vector<Rule> rules;
  for (const auto& r : j) {
    Rule rule;
    rule.id = r.at("id").get<std::string>();
    for (const auto& k : r.at("kinds")) rule.kinds.push_back(parse_enum(k.get<std::string>(), kKinds, "frame kind"));
    for (const auto& role : r.value("required", Json::array())) {
      rule.required.push_back(parse_enum(role.get<std::string>(), kRoles, "role"));
    }
    const std::string agent = r.value("agent", "any");
    constexpr AgentConstraint constraints[] = {AgentConstraint::Any, AgentConstraint::Person,
                                               AgentConstraint::NonPerson};
    rule.agent = parse_enum(agent, constraints, "agent constraint");
    if (r.contains("plural") && !r.at("plural").is_null()) rule.plural = r.at("plural").get<bool>();
    rule.question_template = r.at("template").get<std::string>();
    check_template(rule.question_template);
    rule.answer = parse_enum(r.at("answer").get<std::string>(), kRoles, "role");
    rules.push_back(std::move(rule));
  }
  return rules;
}

Json rules_to_json(const std::vector<Rule>& rules) {
  Json out = Json::array();
  for (const auto& r : rules) {
    Json kinds = Json::array();
    for (auto k : r.kinds) kinds.push_back(to_string(k));
    Json required = Json::array();
    for (auto role : r.required) required.push_back(to_string(role));
    out.push_back({{"id", r.id},
                   {"kinds", kinds},
                   {"required", required},
                   {"agent", to_string(r.agent)},
                   {"plural", r.plural ? Json(*r.plural) : Json()},
                   {"template", r.question_template},
                   {"answer", to_string(r.answer)}});
  }
  return out;
}

namespace {

// Spans keep their surface form except a sentence-initial capital on a
// determiner, pronoun or lexicon word. Acronyms and unknown capitalized
// words, which may be names, stay as they are.
std::string in_question(const std::string& span) {
  if (span.empty()) return span;
  const auto t = nlp::default_tagger().tag(span);
  if (t.empty()) return span;
  const Token& first = t.front();
  const bool acronym = first.text.size() > 1 && std::all_of(first.text.begin(), first.text.end(), [](char c) {
    return std::isupper(static_cast<unsigned char>(c)) != 0 || std::isdigit(static_cast<unsigned char>(c)) != 0;
  });
  const bool known_noun = first.pos == Pos::Noun &&
                          (nlp::is_known_verb(first.lower) || nlp::is_person_word(first.lower) ||
                           nlp::is_location_word(first.lower) || nlp::is_temporal_word(first.lower));
  const bool common = first.pos == Pos::Determiner || (first.pos == Pos::Pronoun && first.lower != "i") ||
                      first.pos == Pos::Adjective || known_noun;
  std::string out = span;
  if (common && !acronym) out[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[0])));
  return out;
}

std::string agreement_do(const Frame& f) {
  if (f.tense == Tense::Past) return "did";
  return f.plural_subject ? "do" : "does";
}

std::string render(const Rule& rule, const Frame& f) {
  auto arg = [&](Role r) {
    const auto* s = f.argument(r);
    return s == nullptr ? std::string() : in_question(*s);
  };
  std::string out;
  const std::string& tpl = rule.question_template;
  for (std::size_t i = 0; i < tpl.size();) {
    if (tpl[i] != '{') {
      out += tpl[i++];
      continue;
    }
    const auto close = tpl.find('}', i);
    const std::string name = tpl.substr(i + 1, close - i - 1);
    i = close + 1;
    if (name == "subject") out += arg(Role::CopulaSubject);
    else if (name == "complement") out += arg(Role::CopulaComplement);
    else if (name == "agent") out += arg(Role::Agent);
    else if (name == "patient") out += arg(Role::Patient);
    else if (name == "temporal") out += arg(Role::Temporal);
    else if (name == "location") out += arg(Role::Location);
    else if (name == "manner") out += arg(Role::Manner);
    else if (name == "predicate-base") out += f.predicate;
    else if (name == "predicate-3sg") {
      out += f.tense == Tense::Past ? nlp::past_tense(f.predicate) : nlp::third_singular(f.predicate);
    } else if (name == "do") out += agreement_do(f);
    else if (name == "who-what") out += f.class_of(Role::Agent) == EntityClass::Person ? "Who" : "What";
  }
  out = collapse_whitespace(out);
  for (std::size_t pos; (pos = out.find(" ?")) != std::string::npos;) out.erase(pos, 1);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  if (out.empty() || out.back() != '?') out += '?';
  return out;
}

bool matches(const Rule& rule, const Frame& f) {
  if (std::find(rule.kinds.begin(), rule.kinds.end(), f.kind) == rule.kinds.end()) return false;
  for (Role r : rule.required) {
    if (f.argument(r) == nullptr) return false;
  }
  if (f.argument(rule.answer) == nullptr) return false;
  if (rule.plural && *rule.plural != f.plural_subject) return false;
  switch (rule.agent) {
    case AgentConstraint::Any: return true;
    case AgentConstraint::Person: return f.class_of(Role::Agent) == EntityClass::Person;
    case AgentConstraint::NonPerson:
      return f.argument(Role::Agent) != nullptr && f.class_of(Role::Agent) != EntityClass::Person;
  }
  return false;
}

}  // namespace

std::vector<GeneratedQuestion> form_questions(const Frame& frame, const std::vector<Rule>& rules) {
  std::vector<GeneratedQuestion> out;
  for (const auto& rule : rules) {
    if (!matches(rule, frame)) continue;
    GeneratedQuestion q;
    q.text = render(rule, frame);
    q.answer_span = *frame.argument(rule.answer);
    q.rule_id = rule.id;
    q.source_sentence = frame.source_sentence;
    out.push_back(std::move(q));
  }
  return out;
}

void to_json(Json& j, const GeneratedQuestion& q) {
  j = Json{{"text", q.text},
           {"answer_span", q.answer_span},
           {"rule_id", q.rule_id},
           {"source_chunk_id", q.source_chunk_id},
           {"source_sentence", q.source_sentence},
           {"score", q.score}};
}

void from_json(const Json& j, GeneratedQuestion& q) {
  q.text = j.at("text").get<std::string>();
  q.answer_span = j.at("answer_span").get<std::string>();
  q.rule_id = j.value("rule_id", "");
  q.source_chunk_id = j.value("source_chunk_id", "");
  q.source_sentence = j.value("source_sentence", "");
  q.score = j.value("score", 0.0);
}

// ---------------------------------------------------------------- filtering and pipeline

std::vector<GeneratedQuestion> filter_questions(const std::vector<GeneratedQuestion>& questions,
                                                const Glossary& glossary, const nlp::Tagger& tagger) {
  std::vector<GeneratedQuestion> kept;
  std::unordered_set<std::string> seen;
  for (const auto& q : questions) {
    const std::size_t length = tokenize(q.text).size();
    if (length < 4 || length > 20) continue;
    std::size_t nouns = 0;
    for (const auto& t : tagger.tag(q.text)) nouns += t.is_nominal() ? 1 : 0;
    if (nouns == 0) continue;
    const std::size_t hits = glossary.hits(q.text);
    if (hits == 0) continue;
    if (!seen.insert(casefold(q.text)).second) continue;
    GeneratedQuestion k = q;
    const int met = (length >= 6 && length <= 12 ? 1 : 0) + (nouns >= 2 ? 1 : 0) + (hits >= 2 ? 1 : 0);
    k.score = met / 3.0;
    kept.push_back(std::move(k));
  }
  return kept;
}

std::vector<GeneratedQuestion> generate(const std::vector<Chunk>& chunks, const PipelineOptions& options,
                                        const nlp::Tagger& tagger) {
  const Glossary glossary = build_glossary(chunks, options.glossary_size);
  std::vector<GeneratedQuestion> all;
  for (const auto& chunk : chunks) {
    const auto sentences = split_sentences(strip_tags(chunk.body));
    if (sentences.empty()) continue;
    std::set<std::size_t> chosen;
    for (std::size_t i : textrank_select_indices(sentences, options.ratio)) {
      if (glossary.hits(sentences[i]) > 0) chosen.insert(i);
    }
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (is_mention_sentence(sentences[i])) chosen.insert(i);
    }
    for (std::size_t i : chosen) {
      const std::string& original = sentences[i];
      for (const auto& simple : simplify(original, tagger)) {
        for (const auto& frame : extract_frames(simple, tagger)) {
          for (auto& q : form_questions(frame)) {
            if (original.find(q.answer_span) == std::string::npos) continue;
            q.source_chunk_id = chunk.id;
            q.source_sentence = original;
            all.push_back(std::move(q));
          }
        }
      }
    }
  }
  return filter_questions(all, glossary, tagger);
}

}  // namespace deskqa::qagen
