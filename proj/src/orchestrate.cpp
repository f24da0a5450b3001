#include "deskqa/orchestrate.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <regex>
#include <set>

#include <sys/wait.h>

#include "deskqa/error.hpp"
#include "deskqa/text.hpp"

namespace deskqa::orchestrate {

namespace {

constexpr std::array kPhaseNames = {"AwaitingQuestion", "Disambiguating", "AnswerShown", "AutomatonPending",
                                    "Searching",        "HandedOff",      "Closed"};
constexpr std::array kActorNames = {"user", "system", "agent"};
constexpr std::array kTurnKindNames = {"text",    "choice",    "answer",    "clarify",  "search_results",
                                       "consent", "follow_up", "execution", "reprompt", "notice"};

template <typename E, std::size_t N>
E enum_from(const std::array<const char*, N>& names, std::string_view name, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (name == names[i]) return static_cast<E>(i);
  }
  throw Error(ErrorCode::ParseError, std::string("unknown ") + what + ": " + std::string(name), std::string(name));
}

const std::set<std::string, std::less<>> kYes = {"yes",  "y",     "yeah",    "yep",     "ok",
                                                 "okay", "sure",  "please",  "approve", "proceed",
                                                 "ahead", "agree", "confirm"};
const std::set<std::string, std::less<>> kNo = {"no", "n", "nope", "don", "dont", "cancel", "decline", "stop", "not"};
const std::set<std::string, std::less<>> kQuestionStarts = {
    "how",  "what", "why",   "when", "where", "who",    "which", "can",  "could", "do",  "does", "did",
    "is",   "are",  "will",  "would", "should", "may",  "am",    "was",  "were",  "have", "has"};
const std::set<std::string, std::less<>> kThanks = {"thanks", "thank", "thx", "great", "perfect", "cool", "bye"};

bool wants_human(const std::vector<std::string>& tokens) {
  const bool asks = std::any_of(tokens.begin(), tokens.end(), [](const std::string& t) {
    return t == "talk" || t == "speak" || t == "connect" || t == "transfer";
  });
  const bool person = std::any_of(tokens.begin(), tokens.end(), [](const std::string& t) {
    return t == "human" || t == "agent" || t == "person" || t == "someone";
  });
  return asks && person;
}

bool none_of_these(const std::vector<std::string>& tokens) {
  return tokens.size() <= 4 && std::any_of(tokens.begin(), tokens.end(), [](const std::string& t) {
           return t == "neither" || t == "none" || t == "other";
         });
}

bool small_talk(const std::vector<std::string>& tokens) {
  if (tokens.empty() || tokens.size() > 4) return false;
  return std::all_of(tokens.begin(), tokens.end(), [](const std::string& t) {
    return kThanks.count(t) != 0 || kYes.count(t) != 0 || kNo.count(t) != 0 || t == "you" || t == "that" ||
           t == "s" || t == "it" || t == "all" || t == "works";
  });
}

Json prediction_json(const classify::ClassPrediction& p) {
  return {{"class_id", p.class_id}, {"raw_margin", p.raw_margin}, {"confidence", p.confidence}};
}

std::string shell_quote(const std::string& value) {
  std::string out = "'";
  for (char c : value) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

const char* to_string(Phase phase) { return kPhaseNames.at(static_cast<std::size_t>(phase)); }
Phase phase_from_string(std::string_view name) { return enum_from<Phase>(kPhaseNames, name, "phase"); }
const char* to_string(Actor actor) { return kActorNames.at(static_cast<std::size_t>(actor)); }
const char* to_string(TurnKind kind) { return kTurnKindNames.at(static_cast<std::size_t>(kind)); }

const char* to_string(Intent intent) {
  switch (intent) {
    case Intent::Noop: return "noop";
    case Intent::Question: return "question";
    case Intent::Statement: return "statement";
    case Intent::ChoiceReply: return "choice-reply";
  }
  return "noop";
}

bool legal_transition(Phase from, Phase to) {
  using P = Phase;
  if (from == to || from == P::Closed) return false;
  if (to == P::Closed) return true;
  if (to == P::HandedOff) return from != P::HandedOff;
  switch (from) {
    case P::AwaitingQuestion:
      return to == P::AnswerShown || to == P::Disambiguating || to == P::Searching;
    case P::Disambiguating:
      return to == P::AnswerShown || to == P::Searching;
    case P::AnswerShown:
      return to == P::AutomatonPending || to == P::AwaitingQuestion;
    case P::AutomatonPending:
      return to == P::AnswerShown;
    case P::Searching:
      return to == P::AwaitingQuestion;
    default:
      return false;
  }
}

void to_json(Json& j, const Turn& t) {
  j = {{"index", t.index},
       {"actor", to_string(t.actor)},
       {"kind", to_string(t.kind)},
       {"text", t.text},
       {"payload", t.payload},
       {"ts", format_rfc3339(t.timestamp)}};
}

void from_json(const Json& j, Turn& t) {
  t.index = j.at("index");
  t.actor = enum_from<Actor>(kActorNames, j.at("actor").get<std::string>(), "actor");
  t.kind = enum_from<TurnKind>(kTurnKindNames, j.at("kind").get<std::string>(), "turn kind");
  t.text = j.at("text");
  t.payload = j.at("payload");
  t.timestamp = parse_rfc3339(j.at("ts"));
}

void OrchestratorConfig::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(theta_answer) || !unit(theta_disambig)) {
    throw Error(ErrorCode::InvalidArgument, "thresholds must lie in [0, 1]");
  }
  if (!(theta_disambig < theta_answer)) {
    throw Error(ErrorCode::InvalidArgument, "theta_disambig must be below theta_answer");
  }
  if (top_k < 2) throw Error(ErrorCode::InvalidArgument, "top_k must be at least 2");
  if (search_k == 0) throw Error(ErrorCode::InvalidArgument, "search_k must be positive");
}

// ---------------------------------------------------------------- dialog

std::map<std::string, std::string> bind_entities(std::string_view text, const std::vector<std::string>& names) {
  std::map<std::string, std::string> out;
  const std::string s(text);
  for (const auto& name : names) {
    std::string pattern;
    for (char c : name) {
      if (c == '_' || c == ' ' || c == '-') {
        pattern += "[ _-]?";
      } else if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
        pattern += c;
      }
    }
    if (pattern.empty()) continue;
    const std::regex re("\\b" + pattern + "\\s*(?:is\\s+|:\\s*|=\\s*)?([A-Za-z0-9._@-]+)", std::regex::icase);
    std::smatch m;
    auto begin = s.cbegin();
    while (std::regex_search(begin, s.cend(), m, re)) {
      const std::string value = m[1].str();
      begin = m[0].second;
      if (casefold(value) == "is") continue;
      out[name] = value;
      break;
    }
  }
  return out;
}

std::optional<bool> consent_reply(std::string_view text) {
  const std::string trimmed = trim(text);
  if (!trimmed.empty() && trimmed.back() == '?') return std::nullopt;
  const auto tokens = tokenize(text);
  if (tokens.empty() || tokens.size() > 6) return std::nullopt;
  bool yes = false, no = false;
  for (const auto& t : tokens) {
    yes = yes || kYes.count(t) != 0;
    no = no || kNo.count(t) != 0;
  }
  if (no) return false;  // "no, please don't" and "do not" read as refusals
  if (yes) return true;
  return std::nullopt;
}

std::string entity_prompt(std::string_view entity) {
  std::string words(entity);
  std::replace(words.begin(), words.end(), '_', ' ');
  std::replace(words.begin(), words.end(), '-', ' ');
  return "What is your " + words + "?";
}

Normalized normalize_input(std::string_view text, const vision::Vocabulary& vocabulary,
                           const disambig::ClarifyingQuestion* pending,
                           const std::vector<std::string>& entity_names) {
  Normalized n;
  n.tokens = tokenize(text);
  if (n.tokens.empty()) return n;
  for (const auto& t : n.tokens) {
    if (is_stopword(t)) continue;
    if (vocabulary.contains(t)) {
      n.entities.push_back(t);
    } else if (auto fix = vocabulary.correction(t)) {
      n.entities.push_back(*fix);
    }
  }
  n.bindings = bind_entities(text, entity_names);
  if (pending != nullptr) {
    const std::string folded = casefold(trim(text));
    for (std::size_t i = 0; i < pending->options.size(); ++i) {
      if (folded == casefold(pending->options[i])) n.choice = i;
    }
    if (!n.choice) n.choice = disambig::match_option(pending->bucket, text);
    if (n.choice) {
      n.intent = Intent::ChoiceReply;
      return n;
    }
  }
  const std::string trimmed = trim(text);
  const bool question = (!trimmed.empty() && trimmed.back() == '?') || kQuestionStarts.count(n.tokens.front()) != 0;
  n.intent = question ? Intent::Question : Intent::Statement;
  return n;
}

// ---------------------------------------------------------------- session

std::vector<std::string> Session::options() const {
  return clarifying ? clarifying->options : std::vector<std::string>{};
}

void to_json(Json& j, const Session& s) {
  j = Json::object();
  j["id"] = s.id;
  j["phase"] = to_string(s.phase);
  j["active_question"] = s.active_question;
  j["question_text"] = s.question_text;
  auto& cands = j["candidates"] = Json::array();
  for (const auto& c : s.candidates) cands.push_back(prediction_json(c));
  j["graph"] = s.graph ? Json(*s.graph) : Json();
  j["clarifying"] = s.clarifying ? Json(*s.clarifying) : Json();
  j["clarify_turns"] = s.clarify_turns;
  j["shown_unit"] = s.shown_unit;
  j["automaton"] = s.automaton ? Json(*s.automaton) : Json();
  j["consent_turn"] = s.consent_turn ? Json(*s.consent_turn) : Json();
  j["awaiting_entity"] = s.awaiting_entity ? Json(*s.awaiting_entity) : Json();
  j["entities"] = s.entities;
  j["turns"] = s.turns;
  auto& tr = j["transitions"] = Json::array();
  for (const auto& [a, b] : s.transitions) tr.push_back({to_string(a), to_string(b)});
  j["assigned_agent"] = s.assigned_agent ? Json(*s.assigned_agent) : Json();
  j["handoff_turn"] = s.handoff_turn ? Json(*s.handoff_turn) : Json();
}

void from_json(const Json& j, Session& s) {
  s = {};
  s.id = j.at("id");
  s.phase = phase_from_string(j.at("phase").get<std::string>());
  s.active_question = j.at("active_question");
  s.question_text = j.at("question_text");
  for (const auto& c : j.at("candidates")) {
    s.candidates.push_back({c.at("class_id"), c.at("raw_margin"), c.at("confidence")});
  }
  if (!j.at("graph").is_null()) s.graph = j.at("graph").get<disambig::ConceptGraph>();
  if (!j.at("clarifying").is_null()) s.clarifying = j.at("clarifying").get<disambig::ClarifyingQuestion>();
  s.clarify_turns = j.at("clarify_turns");
  s.shown_unit = j.at("shown_unit");
  if (!j.at("automaton").is_null()) s.automaton = j.at("automaton").get<AutomatonRef>();
  if (!j.at("consent_turn").is_null()) s.consent_turn = j.at("consent_turn").get<std::size_t>();
  if (!j.at("awaiting_entity").is_null()) s.awaiting_entity = j.at("awaiting_entity").get<std::string>();
  s.entities = j.at("entities").get<std::map<std::string, std::string>>();
  s.turns = j.at("turns").get<std::vector<Turn>>();
  for (const auto& t : j.at("transitions")) {
    s.transitions.emplace_back(phase_from_string(t.at(0).get<std::string>()),
                               phase_from_string(t.at(1).get<std::string>()));
  }
  if (!j.at("assigned_agent").is_null()) s.assigned_agent = j.at("assigned_agent").get<std::string>();
  if (!j.at("handoff_turn").is_null()) s.handoff_turn = j.at("handoff_turn").get<std::size_t>();
}

// ---------------------------------------------------------------- execution

std::string instantiate_command(const AutomatonRef& automaton, const std::map<std::string, std::string>& entities,
                                bool quote) {
  std::string out;
  const std::string& t = automaton.command_template;
  std::size_t i = 0;
  while (i < t.size()) {
    if (t[i] == '{') {
      const auto close = t.find('}', i);
      if (close != std::string::npos) {
        const std::string name = t.substr(i + 1, close - i - 1);
        auto it = entities.find(name);
        if (it == entities.end()) throw Error(ErrorCode::FailedPrecondition, "unbound entity " + name, name);
        out += quote ? shell_quote(it->second) : it->second;
        i = close + 1;
        continue;
      }
    }
    out += t[i++];
  }
  return out;
}

ExecutionResult FakeExecutionAdapter::run(const AutomatonRef& automaton,
                                          const std::map<std::string, std::string>& entities) {
  ExecutionResult r;
  r.command = instantiate_command(automaton, entities, false);
  std::lock_guard lock(mu_);
  commands_.push_back(r.command);
  r.exit_status = exit_status_;
  r.output = exit_status_ == 0 ? "ok" : "failed";
  return r;
}

std::vector<std::string> FakeExecutionAdapter::commands() const {
  std::lock_guard lock(mu_);
  return commands_;
}

ExecutionResult SubprocessExecutionAdapter::run(const AutomatonRef& automaton,
                                                const std::map<std::string, std::string>& entities) {
  ExecutionResult r;
  r.command = instantiate_command(automaton, entities, true);
  FILE* pipe = ::popen((r.command + " 2>&1").c_str(), "r");
  if (pipe == nullptr) throw Error(ErrorCode::Unavailable, "cannot start automaton command", r.command);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
  return r;
}

// ---------------------------------------------------------------- queue

void to_json(Json& j, const QueueEntry& e) {
  j = {{"session_id", e.session_id},
       {"question", e.question},
       {"queued_at", format_rfc3339(e.queued_at)},
       {"claimed_by", e.claimed_by ? Json(*e.claimed_by) : Json()}};
}

bool AgentQueue::enqueue(QueueEntry entry) {
  std::lock_guard lock(mu_);
  for (const auto& e : entries_) {
    if (e.session_id == entry.session_id) return false;
  }
  entries_.push_back(std::move(entry));
  ++version_;
  changed_.notify_all();
  return true;
}

void AgentQueue::claim(const std::string& session_id, const std::string& agent) {
  std::lock_guard lock(mu_);
  for (auto& e : entries_) {
    if (e.session_id == session_id && e.claimed_by != agent) {
      e.claimed_by = agent;
      ++version_;
      changed_.notify_all();
    }
  }
}

void AgentQueue::remove(const std::string& session_id) {
  std::lock_guard lock(mu_);
  const auto before = entries_.size();
  std::erase_if(entries_, [&](const QueueEntry& e) { return e.session_id == session_id; });
  if (entries_.size() != before) {
    ++version_;
    changed_.notify_all();
  }
}

std::vector<QueueEntry> AgentQueue::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::uint64_t AgentQueue::version() const {
  std::lock_guard lock(mu_);
  return version_;
}

std::pair<std::vector<QueueEntry>, std::uint64_t> AgentQueue::wait(std::uint64_t since,
                                                                   std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  changed_.wait_for(lock, timeout, [&] { return version_ != since; });
  return {entries_, version_};
}

// ---------------------------------------------------------------- knowledge

Knowledge build_knowledge(const Store& store, std::shared_ptr<const classify::QuestionClassifier> classifier,
                          std::shared_ptr<const disambig::AttributeLexicon> lexicon) {
  Knowledge k;
  k.snapshot = store.snapshot();
  k.classifier = std::move(classifier);
  k.index = std::make_shared<SearchIndex>(SearchIndex::build(*k.snapshot));
  k.lexicon = std::move(lexicon);
  k.vocabulary = std::make_shared<vision::Vocabulary>(vision::Vocabulary::from_snapshot(*k.snapshot));
  return k;
}

KnowledgeSource::KnowledgeSource(Knowledge knowledge) { publish(std::move(knowledge)); }

std::shared_ptr<const Knowledge> KnowledgeSource::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

void KnowledgeSource::publish(Knowledge knowledge) {
  if (!knowledge.snapshot) knowledge.snapshot = std::make_shared<Snapshot>();
  if (!knowledge.index) knowledge.index = std::make_shared<SearchIndex>();
  if (!knowledge.lexicon) {
    knowledge.lexicon = std::make_shared<disambig::AttributeLexicon>(disambig::AttributeLexicon::builtin());
  }
  if (!knowledge.vocabulary) knowledge.vocabulary = std::make_shared<vision::Vocabulary>();
  auto fresh = std::make_shared<const Knowledge>(std::move(knowledge));
  std::lock_guard lock(mu_);
  current_ = std::move(fresh);
}

// ---------------------------------------------------------------- orchestrator

Orchestrator::Orchestrator(Store& store, KnowledgeSource& knowledge, ExecutionAdapter& adapter, AgentQueue& queue,
                           OrchestratorConfig config, FeedbackListener* listener)
    : store_(store),
      knowledge_(knowledge),
      adapter_(adapter),
      queue_(queue),
      config_(config),
      listener_(listener) {
  config_.validate();
  if (!knowledge_.current()) knowledge_.publish({});
  for (const auto& id : store_.session_ids()) {
    auto slot = std::make_shared<Slot>();
    slot->session = store_.session(id)->get<Session>();
    if (slot->session.phase == Phase::HandedOff) {
      queue_.enqueue({id, slot->session.active_question, store_.now(), slot->session.assigned_agent});
    }
    if (id.rfind("s-", 0) == 0) {
      try {
        next_id_ = std::max<std::uint64_t>(next_id_, std::stoull(id.substr(2)) + 1);
      } catch (const std::exception&) {
      }
    }
    sessions_.emplace(id, std::move(slot));
  }
}

std::string Orchestrator::create_session() {
  std::unique_lock lock(sessions_mu_);
  auto slot = std::make_shared<Slot>();
  slot->session.id = "s-" + std::to_string(next_id_++);
  const std::string id = slot->session.id;
  persist(slot->session);
  sessions_.emplace(id, std::move(slot));
  return id;
}

std::shared_ptr<Orchestrator::Slot> Orchestrator::slot(const std::string& id) const {
  std::shared_lock lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "unknown session " + id, id);
  return it->second;
}

Session Orchestrator::session(const std::string& id) const {
  auto s = slot(id);
  std::lock_guard lock(s->mu);
  return s->session;
}

bool Orchestrator::has_session(const std::string& id) const {
  std::shared_lock lock(sessions_mu_);
  return sessions_.count(id) != 0;
}

std::vector<std::string> Orchestrator::session_ids() const {
  std::shared_lock lock(sessions_mu_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

void Orchestrator::persist(const Session& s) { store_.put_session(s.id, Json(s)); }

Turn& Orchestrator::append(Session& s, Actor actor, TurnKind kind, std::string text, Json payload) {
  Turn t;
  t.index = s.turns.size();
  t.actor = actor;
  t.kind = kind;
  t.text = std::move(text);
  t.payload = std::move(payload);
  t.timestamp = store_.now();
  s.turns.push_back(std::move(t));
  return s.turns.back();
}

void Orchestrator::set_phase(Session& s, Phase to) {
  if (s.phase == to) return;
  if (!legal_transition(s.phase, to)) {
    throw Error(ErrorCode::FailedPrecondition,
                std::string("illegal phase transition ") + to_string(s.phase) + " -> " + to_string(to));
  }
  s.transitions.emplace_back(s.phase, to);
  s.phase = to;
  if (to != Phase::Disambiguating) {
    s.graph.reset();
    s.clarifying.reset();
  }
  if (to != Phase::AutomatonPending) {
    s.automaton.reset();
    s.awaiting_entity.reset();
    s.consent_turn.reset();
  }
}

void Orchestrator::reprompt(Session& s, std::string text) { append(s, Actor::System, TurnKind::Reprompt, std::move(text)); }

std::vector<Turn> Orchestrator::handle_message(const std::string& id, const std::string& text) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  Session& s = sl->session;
  if (s.phase == Phase::Closed) throw Error(ErrorCode::FailedPrecondition, "session is closed", id);
  const std::size_t first_new = s.turns.size() + 1;
  const auto k = knowledge_.current();

  const disambig::ClarifyingQuestion* pending = s.phase == Phase::Disambiguating && s.clarifying ? &*s.clarifying : nullptr;
  std::vector<std::string> entity_names;
  if (s.automaton) entity_names = s.automaton->required_entities;
  const Normalized n = normalize_input(text, *k->vocabulary, pending, entity_names);
  append(s, Actor::User, n.intent == Intent::ChoiceReply ? TurnKind::Choice : TurnKind::Text, text,
         {{"intent", to_string(n.intent)}, {"entities", n.entities}});

  if (s.phase == Phase::HandedOff) {
    persist(s);
    return {};
  }
  for (const auto& [name, value] : n.bindings) s.entities[name] = value;

  if (n.intent == Intent::Noop) {
    reprompt(s, "I did not catch that. Please type your question.");
  } else if (wants_human(n.tokens)) {
    do_handoff(s);
  } else {
    switch (s.phase) {
      case Phase::AwaitingQuestion:
        ask(s, text, *k);
        break;
      case Phase::AnswerShown:
      case Phase::Searching:
        if (small_talk(n.tokens)) {
          append(s, Actor::System, TurnKind::Notice, "Glad to help. Ask another question any time.");
        } else {
          set_phase(s, Phase::AwaitingQuestion);
          ask(s, text, *k);
        }
        break;
      case Phase::Disambiguating:
        if (n.choice) {
          choose(s, *n.choice, *k);
        } else if (none_of_these(n.tokens)) {
          search(s, *k);
        } else {
          reprompt(s, "Please choose one of: " + join(s.options(), ", ") + ".");
        }
        break;
      case Phase::AutomatonPending:
        if (s.awaiting_entity) {
          const std::string name = *s.awaiting_entity;
          if (!s.entities.count(name)) {
            const auto words = split_words(text);
            s.entities[name] = words.size() == 1 ? words[0] : trim(text);
          }
          s.awaiting_entity.reset();
          proceed_automaton(s);
        } else if (auto consent = consent_reply(text)) {
          if (*consent) {
            s.consent_turn = s.turns.size() - 1;
            proceed_automaton(s);
          } else {
            set_phase(s, Phase::AnswerShown);
            append(s, Actor::System, TurnKind::Notice, "Okay, I will not run it.");
          }
        } else {
          reprompt(s, "Please answer yes or no.");
        }
        break;
      default:
        break;
    }
  }
  persist(s);
  return {s.turns.begin() + static_cast<std::ptrdiff_t>(first_new), s.turns.end()};
}

std::vector<Turn> Orchestrator::handle_query(const std::string& id, const vision::ErrorQuery& query) {
  std::string text = query.question();
  if (!query.application.empty()) text += " " + query.application;
  return handle_message(id, text);
}

void Orchestrator::ask(Session& s, const std::string& typed, const Knowledge& k) {
  const std::string question = correct_tokens(typed, *k.vocabulary);
  s.question_text = typed;
  s.active_question = question;
  s.clarify_turns = 0;
  s.candidates.clear();
  s.shown_unit.clear();
  if (!k.classifier || k.classifier->class_ids().empty()) {
    search(s, k);
    return;
  }
  const auto p = k.classifier->predict(question, config_.top_k);
  s.candidates = p.top;
  if (p.no_signal || p.top.empty()) {
    search(s, k);
    return;
  }
  const auto& top = p.top.front();
  if (top.confidence >= config_.theta_answer && k.snapshot->unit(top.class_id) != nullptr) {
    show_answer(s, top.class_id, k);
    return;
  }
  if (top.confidence >= config_.theta_disambig) {
    std::vector<std::string> ids;
    for (const auto& c : p.top) {
      if (k.snapshot->unit(c.class_id) != nullptr) ids.push_back(c.class_id);
    }
    // Authoring order, so option order does not depend on confidences.
    std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
      const auto ta = k.snapshot->unit(a)->created_at, tb = k.snapshot->unit(b)->created_at;
      return ta != tb ? ta < tb : a < b;
    });
    if (ids.size() >= 2) {
      auto graph = disambig::build_graph(disambig::candidates_from(*k.snapshot, ids), *k.lexicon);
      if (auto bucket = disambig::best_bucket(graph)) {
        set_phase(s, Phase::Disambiguating);
        s.graph = std::move(graph);
        clarify(s, *bucket, k);
        return;
      }
    }
  }
  search(s, k);
}

void Orchestrator::clarify(Session& s, const disambig::ConceptBucket& bucket, const Knowledge& k) {
  auto q = disambig::render_question(bucket, *k.lexicon);
  ++s.clarify_turns;
  append(s, Actor::System, TurnKind::Clarify, q.text,
         {{"options", q.options}, {"slot", bucket.slot}, {"round", s.clarify_turns}});
  s.clarifying = std::move(q);
}

void Orchestrator::choose(Session& s, std::size_t option, const Knowledge& k) {
  const auto& bucket = s.clarifying->bucket;
  auto narrowed = disambig::narrow(*s.graph, bucket, bucket.options.at(option));
  std::set<std::string> remaining;
  for (const auto& q : narrowed.questions) remaining.insert(q.class_id);
  if (remaining.size() == 1) {
    show_answer(s, *remaining.begin(), k);
    return;
  }
  s.graph = std::move(narrowed);
  if (s.clarify_turns < config_.max_clarify_turns) {
    if (auto next = disambig::best_bucket(*s.graph, s.graph->consumed)) {
      clarify(s, *next, k);
      return;
    }
  }
  search(s, k);
}

void Orchestrator::show_answer(Session& s, const std::string& unit_id, const Knowledge& k) {
  const AnswerUnit* unit = k.snapshot->unit(unit_id);
  if (unit == nullptr) {
    search(s, k);
    return;
  }
  set_phase(s, Phase::AnswerShown);
  s.shown_unit = unit_id;
  Json payload = {{"unit_id", unit->id}, {"question", unit->primary_question}, {"answer", unit->answer},
                  {"asked", s.active_question}};
  append(s, Actor::System, TurnKind::Answer, strip_tags(unit->answer), std::move(payload));
  if (unit->automaton) {
    set_phase(s, Phase::AutomatonPending);
    s.automaton = unit->automaton;
    for (const auto& [name, value] : bind_entities(s.question_text, unit->automaton->required_entities)) {
      s.entities[name] = value;
    }
    append(s, Actor::System, TurnKind::ConsentPrompt,
           unit->automaton->description + " Shall I go ahead?",
           {{"automaton", Json(*unit->automaton)}, {"unit_id", unit->id}});
  }
}

void Orchestrator::search(Session& s, const Knowledge& k) {
  set_phase(s, Phase::Searching);
  const auto hits = k.index->query(s.active_question, config_.search_k);
  Json list = Json::array();
  for (const auto& h : hits) {
    Json hj = h;
    if (const Chunk* c = k.snapshot->chunk(h.chunk_id)) {
      hj["heading_path"] = c->heading_path;
      hj["body"] = c->body;
    }
    list.push_back(std::move(hj));
  }
  std::string text = hits.empty() ? "I could not find anything on that. You can ask for a support agent."
                                  : "Here is what I found.";
  append(s, Actor::System, TurnKind::SearchResults, std::move(text),
         {{"question", s.active_question}, {"hits", std::move(list)}});
}

void Orchestrator::proceed_automaton(Session& s) {
  for (const auto& name : s.automaton->required_entities) {
    if (!s.entities.count(name)) {
      s.awaiting_entity = name;
      append(s, Actor::System, TurnKind::FollowUp, entity_prompt(name), {{"entity", name}});
      return;
    }
  }
  execute(s);
}

void Orchestrator::execute(Session& s) {
  // Consent must come from an earlier user turn of this session.
  if (!s.consent_turn || *s.consent_turn >= s.turns.size() || s.turns[*s.consent_turn].actor != Actor::User) {
    throw Error(ErrorCode::FailedPrecondition, "automaton run without consent", s.id);
  }
  const AutomatonRef automaton = *s.automaton;
  std::map<std::string, std::string> bound;
  for (const auto& name : automaton.required_entities) bound[name] = s.entities.at(name);
  ExecutionResult r;
  try {
    r = adapter_.run(automaton, bound);
  } catch (const std::exception& e) {
    r.exit_status = -1;
    r.output = e.what();
  }
  const std::size_t consent = *s.consent_turn;
  set_phase(s, Phase::AnswerShown);
  Json payload = {{"automaton_id", automaton.id},
                  {"command", r.command},
                  {"exit_status", r.exit_status},
                  {"output", r.output},
                  {"consent_turn", consent},
                  {"unit_id", s.shown_unit}};
  if (r.exit_status == 0) {
    append(s, Actor::System, TurnKind::Execution, "Done. " + automaton.description, std::move(payload));
  } else {
    payload["offer_handoff"] = true;
    append(s, Actor::System, TurnKind::Execution,
           "The automated fix failed (exit status " + std::to_string(r.exit_status) +
               "). Would you like me to connect you to a support agent?",
           std::move(payload));
  }
}

void Orchestrator::do_handoff(Session& s) {
  set_phase(s, Phase::HandedOff);
  append(s, Actor::System, TurnKind::Notice, "Connecting you to a support agent.");
  s.handoff_turn = s.turns.size() - 1;
  queue_.enqueue({s.id, s.active_question, store_.now(), std::nullopt});
}

FeedbackEvent Orchestrator::record_feedback(const std::string& id, std::size_t turn_index, Polarity polarity,
                                            const std::optional<std::string>& target) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  Session& s = sl->session;
  if (turn_index >= s.turns.size()) {
    throw Error(ErrorCode::NotFound, "unknown turn " + std::to_string(turn_index), std::to_string(turn_index));
  }
  const Turn& turn = s.turns[turn_index];
  std::string resolved;
  std::string question;
  if (turn.kind == TurnKind::Answer || turn.kind == TurnKind::Execution) {
    resolved = turn.payload.value("unit_id", "");
    if (target && *target != resolved) throw Error(ErrorCode::InvalidArgument, "target is not this turn's answer");
  } else if (turn.kind == TurnKind::SearchResults) {
    question = turn.payload.at("question");
    const auto& hits = turn.payload.at("hits");
    if (hits.empty()) throw Error(ErrorCode::InvalidArgument, "turn has no search hits");
    if (target) {
      const bool listed = std::any_of(hits.begin(), hits.end(),
                                      [&](const Json& h) { return h.at("chunk_id").get<std::string>() == *target; });
      if (!listed) throw Error(ErrorCode::InvalidArgument, "target is not among the turn's hits", *target);
      resolved = *target;
    } else {
      resolved = hits.front().at("chunk_id");
    }
  } else {
    throw Error(ErrorCode::InvalidArgument, "turn has no feedback target", std::to_string(turn_index));
  }

  FeedbackEvent event;
  event.session_id = id;
  event.turn_index = turn_index;
  event.target = resolved;
  event.polarity = polarity;
  event = store_.record_feedback(event);

  if (listener_ != nullptr && turn.kind == TurnKind::SearchResults) {
    listener_->on_search_feedback(question, resolved, polarity);
  }
  if (polarity == Polarity::Negative && config_.handoff_on_negative && s.phase != Phase::HandedOff &&
      s.phase != Phase::Closed) {
    do_handoff(s);
  }
  persist(s);
  return event;
}

bool Orchestrator::handoff(const std::string& id) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  Session& s = sl->session;
  if (s.phase == Phase::HandedOff) return false;
  if (s.phase == Phase::Closed) throw Error(ErrorCode::FailedPrecondition, "session is closed", id);
  do_handoff(s);
  persist(s);
  return true;
}

Turn Orchestrator::agent_message(const std::string& id, const std::string& agent, const std::string& text) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  Session& s = sl->session;
  if (s.phase != Phase::HandedOff) throw Error(ErrorCode::FailedPrecondition, "session is not handed off", id);
  if (trim(text).empty()) throw Error(ErrorCode::InvalidArgument, "empty message");
  if (!s.assigned_agent) s.assigned_agent = agent;
  queue_.claim(id, *s.assigned_agent);
  Turn t = append(s, Actor::Agent, TurnKind::Text, text, {{"agent", agent}});
  persist(s);
  return t;
}

bool Orchestrator::close(const std::string& id) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  Session& s = sl->session;
  if (s.phase == Phase::Closed) return false;
  const bool was_handed_off = s.handoff_turn.has_value();
  set_phase(s, Phase::Closed);
  append(s, Actor::System, TurnKind::Notice, "Conversation closed.");
  queue_.remove(id);
  persist(s);
  if (was_handed_off && listener_ != nullptr) listener_->on_agent_conversation(s);
  return true;
}

}  // namespace deskqa::orchestrate
