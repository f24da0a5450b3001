#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deskqa/classify.hpp"
#include "deskqa/disambig.hpp"
#include "deskqa/retrieval.hpp"
#include "deskqa/store.hpp"
#include "deskqa/vision.hpp"

namespace deskqa::orchestrate {

enum class Phase { AwaitingQuestion, Disambiguating, AnswerShown, AutomatonPending, Searching, HandedOff, Closed };

const char* to_string(Phase phase);
Phase phase_from_string(std::string_view name);

/// The transition relation of the dialog machine. Self-loops are not
/// transitions and are never recorded.
bool legal_transition(Phase from, Phase to);

enum class Actor { User, System, Agent };

enum class TurnKind {
  Text,           // user or agent free text
  Choice,         // user reply that picked a clarifying option
  Answer,         // answer card
  Clarify,        // clarifying question with options
  SearchResults,  // ranked chunk hits
  ConsentPrompt,  // asks permission to run an automaton
  FollowUp,       // asks for a missing automaton entity
  Execution,      // automaton result
  Reprompt,       // input did not fit the phase
  Notice,         // hand-off, closing and other plain system messages
};

const char* to_string(Actor actor);
const char* to_string(TurnKind kind);

struct Turn {
  std::size_t index = 0;
  Actor actor = Actor::User;
  TurnKind kind = TurnKind::Text;
  std::string text;
  Json payload = Json::object();
  Timestamp timestamp = 0;

  bool operator==(const Turn&) const = default;
};

void to_json(Json& j, const Turn& t);
void from_json(const Json& j, Turn& t);

struct OrchestratorConfig {
  double theta_answer = 0.7;
  double theta_disambig = 0.3;
  std::size_t top_k = 5;
  std::size_t max_clarify_turns = 3;
  std::size_t search_k = 10;
  bool handoff_on_negative = true;

  void validate() const;  // throws InvalidArgument
};

enum class Intent { Noop, Question, Statement, ChoiceReply };

const char* to_string(Intent intent);

struct Normalized {
  Intent intent = Intent::Noop;
  std::vector<std::string> tokens;                // lowercased
  std::vector<std::string> entities;              // domain terms found, after fuzzy correction
  std::map<std::string, std::string> bindings;    // automaton entity values named in the text
  std::optional<std::size_t> choice;              // index into the pending options
};

/// Values for named entities written as "user id is jdoe", "user_id: jdoe"
/// or "user-id=jdoe".
std::map<std::string, std::string> bind_entities(std::string_view text, const std::vector<std::string>& names);

Normalized normalize_input(std::string_view text, const vision::Vocabulary& vocabulary,
                           const disambig::ClarifyingQuestion* pending = nullptr,
                           const std::vector<std::string>& entity_names = {});

/// true for yes-like replies, false for no-like replies.
std::optional<bool> consent_reply(std::string_view text);

/// "What is your user id?" for "user_id".
std::string entity_prompt(std::string_view entity);

struct Session {
  std::string id;
  Phase phase = Phase::AwaitingQuestion;
  std::string active_question;  // after vocabulary correction
  std::string question_text;    // as typed
  std::vector<classify::ClassPrediction> candidates;
  std::optional<disambig::ConceptGraph> graph;
  std::optional<disambig::ClarifyingQuestion> clarifying;
  std::size_t clarify_turns = 0;  // clarifying questions asked for the active question
  std::string shown_unit;
  std::optional<AutomatonRef> automaton;  // awaiting consent or entities
  std::optional<std::size_t> consent_turn;
  std::optional<std::string> awaiting_entity;
  std::map<std::string, std::string> entities;
  std::vector<Turn> turns;
  std::vector<std::pair<Phase, Phase>> transitions;
  std::optional<std::string> assigned_agent;
  std::optional<std::size_t> handoff_turn;
  std::vector<std::string> options() const;  // pending clarifying options
};

void to_json(Json& j, const Session& s);
void from_json(const Json& j, Session& s);

struct ExecutionResult {
  int exit_status = 0;
  std::string output;
  std::string command;
};

/// Replaces each {name} by its bound value, shell-quoted when asked.
std::string instantiate_command(const AutomatonRef& automaton, const std::map<std::string, std::string>& entities,
                                bool shell_quote);

class ExecutionAdapter {
 public:
  virtual ~ExecutionAdapter() = default;
  virtual ExecutionResult run(const AutomatonRef& automaton, const std::map<std::string, std::string>& entities) = 0;
};

/// Records every dispatched command and answers with a configurable status.
class FakeExecutionAdapter final : public ExecutionAdapter {
 public:
  ExecutionResult run(const AutomatonRef& automaton, const std::map<std::string, std::string>& entities) override;
  void set_exit_status(int status) { exit_status_ = status; }
  std::vector<std::string> commands() const;

 private:
  mutable std::mutex mu_;
  int exit_status_ = 0;
  std::vector<std::string> commands_;
};

/// Runs the instantiated command through /bin/sh and captures stdout.
class SubprocessExecutionAdapter final : public ExecutionAdapter {
 public:
  ExecutionResult run(const AutomatonRef& automaton, const std::map<std::string, std::string>& entities) override;
};

/// Receives feedback and conversations for learning on the job.
class FeedbackListener {
 public:
  virtual ~FeedbackListener() = default;
  virtual void on_search_feedback(const std::string& question, const std::string& chunk_id, Polarity polarity) = 0;
  virtual void on_agent_conversation(const Session& session) = 0;
};

struct QueueEntry {
  std::string session_id;
  std::string question;
  Timestamp queued_at = 0;
  std::optional<std::string> claimed_by;
};

void to_json(Json& j, const QueueEntry& e);

/// Hand-off inbox. Enqueueing a session twice keeps a single entry. Each
/// change bumps a version that long-polling readers wait on.
class AgentQueue {
 public:
  bool enqueue(QueueEntry entry);
  void claim(const std::string& session_id, const std::string& agent);
  void remove(const std::string& session_id);
  std::vector<QueueEntry> entries() const;
  std::uint64_t version() const;

  /// Blocks until the version moves past `since` or the timeout expires.
  std::pair<std::vector<QueueEntry>, std::uint64_t> wait(std::uint64_t since, std::chrono::milliseconds timeout) const;

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable changed_;
  std::vector<QueueEntry> entries_;
  std::uint64_t version_ = 0;
};

/// Everything a turn reads, swapped as a whole.
struct Knowledge {
  std::shared_ptr<const Snapshot> snapshot;
  std::shared_ptr<const classify::QuestionClassifier> classifier;  // null before the first training
  std::shared_ptr<const SearchIndex> index;
  std::shared_ptr<const disambig::AttributeLexicon> lexicon;
  std::shared_ptr<const vision::Vocabulary> vocabulary;
};

/// Snapshot, search index and vocabulary from the store's current contents.
Knowledge build_knowledge(const Store& store, std::shared_ptr<const classify::QuestionClassifier> classifier,
                          std::shared_ptr<const disambig::AttributeLexicon> lexicon =
                              std::make_shared<disambig::AttributeLexicon>(disambig::AttributeLexicon::builtin()));

class KnowledgeSource {
 public:
  KnowledgeSource() = default;
  explicit KnowledgeSource(Knowledge knowledge);
  std::shared_ptr<const Knowledge> current() const;
  void publish(Knowledge knowledge);

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const Knowledge> current_;
};

/// Routes user turns through classification, disambiguation and search.
/// Sessions are persisted to the store after every change and processed
/// one request at a time each.
class Orchestrator {
 public:
  Orchestrator(Store& store, KnowledgeSource& knowledge, ExecutionAdapter& adapter, AgentQueue& queue,
               OrchestratorConfig config = {}, FeedbackListener* listener = nullptr);

  std::string create_session();
  Session session(const std::string& id) const;
  bool has_session(const std::string& id) const;
  std::vector<std::string> session_ids() const;

  /// Appends the user turn and returns the system turns it produced.
  /// Closed sessions raise FailedPrecondition; in a handed-off session the
  /// text is relayed to the agent and no system turn is produced.
  std::vector<Turn> handle_message(const std::string& id, const std::string& text);

  /// Screenshot turn: the error text (or all text) with the application
  /// name appended.
  std::vector<Turn> handle_query(const std::string& id, const vision::ErrorQuery& query);

  /// The target defaults to the turn's answer unit or its top search hit.
  FeedbackEvent record_feedback(const std::string& id, std::size_t turn_index, Polarity polarity,
                                const std::optional<std::string>& target = std::nullopt);

  /// False when the session was already handed off.
  bool handoff(const std::string& id);

  Turn agent_message(const std::string& id, const std::string& agent, const std::string& text);

  /// False when the session was already closed.
  bool close(const std::string& id);

  const OrchestratorConfig& config() const { return config_; }

 private:
  struct Slot {
    std::mutex mu;
    Session session;
  };

  std::shared_ptr<Slot> slot(const std::string& id) const;
  void persist(const Session& s);
  Turn& append(Session& s, Actor actor, TurnKind kind, std::string text, Json payload = Json::object());
  void set_phase(Session& s, Phase to);

  void ask(Session& s, const std::string& typed, const Knowledge& k);
  void clarify(Session& s, const disambig::ConceptBucket& bucket, const Knowledge& k);
  void choose(Session& s, std::size_t option, const Knowledge& k);
  void show_answer(Session& s, const std::string& unit_id, const Knowledge& k);
  void search(Session& s, const Knowledge& k);
  void proceed_automaton(Session& s);
  void execute(Session& s);
  void do_handoff(Session& s);
  void reprompt(Session& s, std::string text);

  Store& store_;
  KnowledgeSource& knowledge_;
  ExecutionAdapter& adapter_;
  AgentQueue& queue_;
  OrchestratorConfig config_;
  FeedbackListener* listener_;

  mutable std::shared_mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
  std::uint64_t next_id_ = 1;
};

}  // namespace deskqa::orchestrate
