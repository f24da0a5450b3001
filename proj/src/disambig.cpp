#include "deskqa/disambig.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "deskqa/error.hpp"
#include "deskqa/text.hpp"

namespace deskqa::disambig {

using nlp::Pos;

Concepts extract_concepts(std::string_view question, const nlp::Tagger& tagger) {
  Concepts out;
  const auto tokens = tagger.tag(question);
  std::size_t i = 0;
  while (i < tokens.size()) {
    const auto& t = tokens[i];
    if (t.pos == Pos::Verb) {
      if (!is_stopword(t.lemma) &&
          std::find(out.verbs.begin(), out.verbs.end(), t.lemma) == out.verbs.end()) {
        out.verbs.push_back(t.lemma);
      }
      ++i;
      continue;
    }
    if (t.pos != Pos::Adjective && !t.is_nominal()) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::size_t last_noun = std::string::npos;
    while (j < tokens.size() && (tokens[j].pos == Pos::Adjective || tokens[j].is_nominal())) {
      if (tokens[j].is_nominal()) last_noun = j;
      ++j;
    }
    if (last_noun != std::string::npos) {
      NounPhrase np;
      np.head = tokens[last_noun].lower;
      std::vector<std::string> words;
      for (std::size_t k = i; k <= last_noun; ++k) {
        words.push_back(tokens[k].lower);
        if (k != last_noun && !is_stopword(tokens[k].lower)) np.modifiers.push_back(tokens[k].lower);
      }
      np.text = join(words, " ");
      if (!is_stopword(np.head)) out.noun_phrases.push_back(std::move(np));
    }
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------- lexicon

namespace {

SlotTemplate template_from_json(const Json& j, SlotTemplate fallback) {
  if (j.is_null()) return fallback;
  SlotTemplate t;
  t.text = j.value("text", fallback.text);
  t.article = j.value("article", fallback.article);
  t.title_case = j.value("title_case", fallback.title_case);
  if (t.text.find("{options}") == std::string::npos) {
    throw Error(ErrorCode::ParseError, "question template lacks {options}: " + t.text, t.text);
  }
  return t;
}

Json template_to_json(const SlotTemplate& t) {
  return Json{{"text", t.text}, {"article", t.article}, {"title_case", t.title_case}};
}

}  // namespace

AttributeLexicon AttributeLexicon::builtin() {
  AttributeLexicon lex;
  lex.entries_.push_back({"card-kind", "card", {"debit", "credit"}, {"Do you need a {options}?", false, true}});
  lex.entries_.push_back(
      {"card-state", "card", {"new", "duplicate"}, {"Do you want to apply for {options}?", true, false}});
  return lex;
}

AttributeLexicon AttributeLexicon::from_json(const Json& j) {
  AttributeLexicon lex;
  try {
    for (const auto& s : j.value("slots", Json::array())) {
      SlotEntry e;
      e.key = s.at("key").get<std::string>();
      e.head = casefold(s.at("head").get<std::string>());
      for (const auto& v : s.at("values")) e.values.push_back(casefold(v.get<std::string>()));
      e.question = template_from_json(s.value("template", Json()), SlotTemplate{});
      if (e.key.empty() || e.values.empty()) throw Error(ErrorCode::ParseError, "slot needs a key and values");
      lex.entries_.push_back(std::move(e));
    }
    if (j.contains("defaults")) {
      const auto& d = j.at("defaults");
      lex.modifier_default_ = template_from_json(d.value("modifier", Json()), lex.modifier_default_);
      lex.topic_default_ = template_from_json(d.value("topic", Json()), lex.topic_default_);
      lex.action_default_ = template_from_json(d.value("action", Json()), lex.action_default_);
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("attribute lexicon: ") + e.what());
  }
  return lex;
}

AttributeLexicon AttributeLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string(), path.string());
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ParseError, "attribute lexicon is not JSON", path.string());
  return from_json(j);
}

Json AttributeLexicon::to_json() const {
  Json slots = Json::array();
  for (const auto& e : entries_) {
    slots.push_back({{"key", e.key}, {"head", e.head}, {"values", e.values}, {"template", template_to_json(e.question)}});
  }
  return Json{{"slots", slots},
              {"defaults",
               {{"modifier", template_to_json(modifier_default_)},
                {"topic", template_to_json(topic_default_)},
                {"action", template_to_json(action_default_)}}}};
}

std::string AttributeLexicon::slot_for(std::string_view head, std::string_view modifier) const {
  for (const auto& e : entries_) {
    if (e.head == head && std::find(e.values.begin(), e.values.end(), modifier) != e.values.end()) return e.key;
  }
  return std::string(head);
}

const SlotTemplate& AttributeLexicon::template_for(std::string_view slot, ConceptKind kind) const {
  for (const auto& e : entries_) {
    if (e.key == slot) return e.question;
  }
  switch (kind) {
    case ConceptKind::Topic: return topic_default_;
    case ConceptKind::Action: return action_default_;
    case ConceptKind::Modifier: break;
  }
  return modifier_default_;
}

LexiconSource::LexiconSource(AttributeLexicon lexicon)
    : lexicon_(std::make_shared<const AttributeLexicon>(std::move(lexicon))) {}

LexiconSource::LexiconSource(std::filesystem::path path) : path_(std::move(path)) {
  lexicon_ = std::make_shared<const AttributeLexicon>(AttributeLexicon::load(*path_));
  loaded_at_ = std::filesystem::last_write_time(*path_);
}

std::shared_ptr<const AttributeLexicon> LexiconSource::current() const {
  std::lock_guard lock(mu_);
  return lexicon_;
}

bool LexiconSource::reload_if_changed() {
  if (!path_) return false;
  std::error_code ec;
  const auto stamp = std::filesystem::last_write_time(*path_, ec);
  {
    std::lock_guard lock(mu_);
    if (ec || stamp == loaded_at_) return false;
  }
  auto fresh = std::make_shared<const AttributeLexicon>(AttributeLexicon::load(*path_));
  std::lock_guard lock(mu_);
  lexicon_ = std::move(fresh);
  loaded_at_ = stamp;
  return true;
}

// ---------------------------------------------------------------- graph

std::vector<std::size_t> ConceptGraph::questions_of(std::size_t concept_index) const {
  std::vector<std::size_t> out;
  for (auto it = edges.lower_bound({concept_index, 0}); it != edges.end() && it->first == concept_index; ++it) {
    out.push_back(it->second);
  }
  return out;
}

std::vector<std::size_t> ConceptGraph::concepts_of(std::size_t question_index) const {
  std::vector<std::size_t> out;
  for (const auto& [c, q] : edges) {
    if (q == question_index) out.push_back(c);
  }
  return out;
}

std::vector<std::string> ConceptGraph::class_ids() const {
  std::vector<std::string> out;
  for (const auto& q : questions) out.push_back(q.class_id);
  return out;
}

std::vector<Candidate> candidates_from(const Snapshot& snapshot, const std::vector<std::string>& class_ids) {
  std::vector<Candidate> out;
  for (const auto& id : class_ids) {
    const auto* unit = snapshot.unit(id);
    if (unit == nullptr) throw Error(ErrorCode::NotFound, "unknown answer unit " + id, id);
    out.push_back({id, unit->primary_question});
  }
  return out;
}

ConceptGraph build_graph(const std::vector<Candidate>& candidates, const AttributeLexicon& lexicon,
                         const nlp::Tagger& tagger) {
  if (candidates.size() < 2) throw Error(ErrorCode::InvalidArgument, "nothing to disambiguate");
  ConceptGraph g;
  std::map<std::pair<std::string, std::string>, std::size_t> index;  // (text, slot)
  auto node = [&](ConceptNode n) {
    auto key = std::make_pair(n.text, n.slot);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    g.concepts.push_back(std::move(n));
    index.emplace(std::move(key), g.concepts.size() - 1);
    return g.concepts.size() - 1;
  };
  for (const auto& c : candidates) {
    const std::size_t q = g.questions.size();
    g.questions.push_back({c.class_id, c.question, false});
    const auto concepts = extract_concepts(c.question, tagger);
    for (const auto& np : concepts.noun_phrases) {
      g.edges.insert({node({np.head, "topic", "", ConceptKind::Topic}), q});
      for (const auto& m : np.modifiers) {
        g.edges.insert({node({m, lexicon.slot_for(np.head, m), np.head, ConceptKind::Modifier}), q});
      }
    }
    for (const auto& v : concepts.verbs) g.edges.insert({node({v, "action", "", ConceptKind::Action}), q});
    g.questions.back().bare = concepts.empty();
  }
  return g;
}

std::size_t ConceptBucket::max_cell() const {
  std::size_t m = 0;
  for (const auto& cell : partition) m = std::max(m, cell.size());
  return m;
}

std::vector<ConceptBucket> candidate_buckets(const ConceptGraph& graph, const std::set<std::string>& excluded) {
  std::map<std::string, std::vector<std::size_t>> by_slot;
  std::vector<std::string> slot_order;
  for (std::size_t c = 0; c < graph.concepts.size(); ++c) {
    const auto& slot = graph.concepts[c].slot;
    if (excluded.count(slot) != 0 || graph.consumed.count(slot) != 0) continue;
    auto [it, fresh] = by_slot.try_emplace(slot);
    if (fresh) slot_order.push_back(slot);
    it->second.push_back(c);
  }
  std::vector<ConceptBucket> out;
  for (const auto& slot : slot_order) {
    ConceptBucket b;
    b.slot = slot;
    std::set<std::size_t> covered;
    for (std::size_t c : by_slot[slot]) {
      auto qs = graph.questions_of(c);
      if (qs.empty()) continue;
      b.kind = graph.concepts[c].kind;
      b.head = graph.concepts[c].head;
      b.options.push_back(graph.concepts[c].text);
      std::vector<std::string> cell;
      for (std::size_t q : qs) {
        cell.push_back(graph.questions[q].class_id);
        covered.insert(q);
      }
      b.partition.push_back(std::move(cell));
    }
    if (b.options.size() < 2 || covered.size() < 2) continue;
    if (b.max_cell() >= graph.questions.size()) continue;
    out.push_back(std::move(b));
  }
  return out;
}

std::optional<ConceptBucket> best_bucket(const ConceptGraph& graph, const std::set<std::string>& excluded) {
  auto buckets = candidate_buckets(graph, excluded);
  if (buckets.empty()) return std::nullopt;
  auto better = [](const ConceptBucket& a, const ConceptBucket& b) {
    if (a.max_cell() != b.max_cell()) return a.max_cell() < b.max_cell();
    if (a.options.size() != b.options.size()) return a.options.size() < b.options.size();
    return a.slot < b.slot;
  };
  return *std::min_element(buckets.begin(), buckets.end(), better);
}

// ---------------------------------------------------------------- rendering and narrowing

namespace {

std::string phrase(const ConceptBucket& bucket, std::size_t option) {
  const auto& v = bucket.options[option];
  return bucket.kind == ConceptKind::Modifier && !bucket.head.empty() ? v + " " + bucket.head : v;
}

std::string with_article(const std::string& p) {
  if (p.empty()) return p;
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(p[0])));
  const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
  return (vowel ? "an " : "a ") + p;
}

std::string or_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += i + 1 == items.size() ? " or " : ", ";
    out += items[i];
  }
  return out;
}

}  // namespace

std::string option_label(const ConceptBucket& bucket, std::size_t option) {
  return title_case(phrase(bucket, option));
}

ClarifyingQuestion render_question(const ConceptBucket& bucket, const AttributeLexicon& lexicon) {
  const auto& tpl = lexicon.template_for(bucket.slot, bucket.kind);
  ClarifyingQuestion q;
  q.bucket = bucket;
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < bucket.options.size(); ++i) {
    q.options.push_back(option_label(bucket, i));
    std::string p = tpl.title_case ? q.options.back() : phrase(bucket, i);
    parts.push_back(tpl.article ? with_article(p) : p);
  }
  q.text = tpl.text;
  q.text.replace(q.text.find("{options}"), 9, or_list(parts));
  return q;
}

std::optional<std::size_t> match_option(const ConceptBucket& bucket, std::string_view reply) {
  const std::string folded = casefold(trim(reply));
  for (std::size_t i = 0; i < bucket.options.size(); ++i) {
    if (folded == bucket.options[i] || folded == casefold(option_label(bucket, i))) return i;
  }
  // A free-text reply naming exactly one option ("the credit one").
  const auto words = tokenize(reply);
  std::optional<std::size_t> hit;
  for (std::size_t i = 0; i < bucket.options.size(); ++i) {
    const auto value_words = tokenize(bucket.options[i]);
    if (value_words.empty()) continue;
    for (std::size_t w = 0; w + value_words.size() <= words.size(); ++w) {
      if (std::equal(value_words.begin(), value_words.end(), words.begin() + static_cast<std::ptrdiff_t>(w))) {
        if (hit && *hit != i) return std::nullopt;
        hit = i;
        break;
      }
    }
  }
  return hit;
}

ConceptGraph narrow(const ConceptGraph& graph, const ConceptBucket& bucket, std::string_view chosen) {
  const auto option = match_option(bucket, chosen);
  if (!option) throw Error(ErrorCode::InvalidArgument, "unknown option: " + std::string(chosen), std::string(chosen));
  std::optional<std::size_t> concept_index;
  for (std::size_t c = 0; c < graph.concepts.size(); ++c) {
    if (graph.concepts[c].slot == bucket.slot && graph.concepts[c].text == bucket.options[*option]) concept_index = c;
  }
  if (!concept_index) throw Error(ErrorCode::NotFound, "option is not in the graph", bucket.options[*option]);

  const auto keep_q = graph.questions_of(*concept_index);
  ConceptGraph out;
  out.consumed = graph.consumed;
  out.consumed.insert(bucket.slot);
  std::map<std::size_t, std::size_t> q_map;
  for (std::size_t q : keep_q) {
    q_map[q] = out.questions.size();
    out.questions.push_back(graph.questions[q]);
  }
  std::map<std::size_t, std::size_t> c_map;
  for (const auto& [c, q] : graph.edges) {
    auto qi = q_map.find(q);
    if (qi == q_map.end()) continue;
    auto [ci, fresh] = c_map.try_emplace(c, out.concepts.size());
    if (fresh) out.concepts.push_back(graph.concepts[c]);
    out.edges.insert({ci->second, qi->second});
  }
  // Edges are visited by concept index, so concepts keep their relative order.
  return out;
}

// ---------------------------------------------------------------- json

const char* to_string(ConceptKind kind) {
  switch (kind) {
    case ConceptKind::Modifier: return "modifier";
    case ConceptKind::Topic: return "topic";
    case ConceptKind::Action: return "action";
  }
  return "modifier";
}

namespace {

ConceptKind kind_from(const std::string& s) {
  if (s == "modifier") return ConceptKind::Modifier;
  if (s == "topic") return ConceptKind::Topic;
  if (s == "action") return ConceptKind::Action;
  throw Error(ErrorCode::ParseError, "unknown concept kind " + s, s);
}

}  // namespace

void to_json(Json& j, const ConceptGraph& g) {
  j = Json::object();
  auto& concepts = j["concepts"] = Json::array();
  for (const auto& c : g.concepts) {
    concepts.push_back({{"text", c.text}, {"slot", c.slot}, {"head", c.head}, {"kind", to_string(c.kind)}});
  }
  auto& questions = j["questions"] = Json::array();
  for (const auto& q : g.questions) questions.push_back({{"class_id", q.class_id}, {"text", q.text}, {"bare", q.bare}});
  auto& edges = j["edges"] = Json::array();
  for (const auto& [c, q] : g.edges) edges.push_back({c, q});
  j["consumed"] = g.consumed;
}

void from_json(const Json& j, ConceptGraph& g) {
  g = {};
  for (const auto& c : j.at("concepts")) {
    g.concepts.push_back({c.at("text"), c.at("slot"), c.at("head"), kind_from(c.at("kind"))});
  }
  for (const auto& q : j.at("questions")) g.questions.push_back({q.at("class_id"), q.at("text"), q.at("bare")});
  for (const auto& e : j.at("edges")) {
    const auto c = e.at(0).get<std::size_t>();
    const auto q = e.at(1).get<std::size_t>();
    if (c >= g.concepts.size() || q >= g.questions.size()) throw Error(ErrorCode::ParseError, "graph edge out of range");
    g.edges.insert({c, q});
  }
  g.consumed = j.at("consumed").get<std::set<std::string>>();
}

void to_json(Json& j, const ConceptBucket& b) {
  j = {{"slot", b.slot}, {"kind", to_string(b.kind)}, {"head", b.head}, {"options", b.options}, {"partition", b.partition}};
}

void from_json(const Json& j, ConceptBucket& b) {
  b.slot = j.at("slot");
  b.kind = kind_from(j.at("kind"));
  b.head = j.at("head");
  b.options = j.at("options").get<std::vector<std::string>>();
  b.partition = j.at("partition").get<std::vector<std::vector<std::string>>>();
}

void to_json(Json& j, const ClarifyingQuestion& q) {
  j = {{"text", q.text}, {"options", q.options}, {"bucket", q.bucket}};
}

void from_json(const Json& j, ClarifyingQuestion& q) {
  q.text = j.at("text");
  q.options = j.at("options").get<std::vector<std::string>>();
  q.bucket = j.at("bucket").get<ConceptBucket>();
}

}  // namespace deskqa::disambig
