#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deskqa/clock.hpp"

namespace deskqa {

using Json = nlohmann::json;

enum class UnitSource { Curated, Mined, Generated, Harvested };

/// An executable remediation attached to an answer. `command_template`
/// refers to entities as `{name}`.
struct AutomatonRef {
  std::string id;
  std::string description;
  std::string command_template;
  std::vector<std::string> required_entities;

  bool operator==(const AutomatonRef&) const = default;
};

/// Placeholder names appearing in a command template, in order of first use.
std::vector<std::string> template_placeholders(const std::string& command_template);

struct AnswerUnit {
  std::string id;
  std::string primary_question;
  std::vector<std::string> alternate_questions;
  std::string answer;  // sanitized rich text
  std::optional<AutomatonRef> automaton;
  UnitSource source = UnitSource::Curated;
  Timestamp created_at = 0;
  Timestamp updated_at = 0;
  // Maintained by the store.
  std::uint64_t version = 0;
  std::uint64_t revision = 0;  // store revision of the last change

  bool operator==(const AnswerUnit&) const = default;
};

struct TimeAnchor {
  double start_seconds = 0;
  double end_seconds = 0;

  bool operator==(const TimeAnchor&) const = default;
};

struct Chunk {
  std::string id;
  std::string source_id;
  std::vector<std::string> heading_path;
  std::string body;
  std::optional<TimeAnchor> time_anchor;
  std::size_t token_count = 0;

  bool operator==(const Chunk&) const = default;
};

enum class Polarity { Positive, Negative };

struct FeedbackEvent {
  std::string session_id;
  std::size_t turn_index = 0;
  std::string target;
  Polarity polarity = Polarity::Positive;
  Timestamp timestamp = 0;

  bool operator==(const FeedbackEvent&) const = default;
};

enum class CandidateStatus { Pending, Approved, Rejected };
enum class CandidateOrigin { SearchFeedback, AgentConversation };

struct WeightUpdate {
  Timestamp at = 0;
  std::uint64_t weight = 0;

  bool operator==(const WeightUpdate&) const = default;
};

/// A QA pair accumulated from user feedback or agent conversations.
struct HarvestCandidate {
  std::string id;
  std::string question;
  std::string answer_source;  // chunk id, or "agent:<session>:<turn>"
  std::string answer_text;    // agent reply text for conversation candidates
  std::uint64_t weight = 0;
  CandidateStatus status = CandidateStatus::Pending;
  CandidateOrigin created_from = CandidateOrigin::SearchFeedback;
  bool ready_for_review = false;
  std::vector<WeightUpdate> history;
  Timestamp created_at = 0;
  Timestamp decided_at = 0;
  std::string reviewer;
  std::string promoted_unit_id;

  bool operator==(const HarvestCandidate&) const = default;
};

void to_json(Json& j, const AutomatonRef& a);
void from_json(const Json& j, AutomatonRef& a);
void to_json(Json& j, const AnswerUnit& u);
void from_json(const Json& j, AnswerUnit& u);
void to_json(Json& j, const Chunk& c);
void from_json(const Json& j, Chunk& c);
void to_json(Json& j, const FeedbackEvent& f);
void from_json(const Json& j, FeedbackEvent& f);
void to_json(Json& j, const HarvestCandidate& c);
void from_json(const Json& j, HarvestCandidate& c);

const char* to_string(UnitSource s);
const char* to_string(Polarity p);
const char* to_string(CandidateStatus s);
const char* to_string(CandidateOrigin o);

/// Throws InvalidArgument when the unit breaks an invariant.
void validate(const AnswerUnit& unit);
void validate(const Chunk& chunk);

/// Frozen view of answer units and chunks. Never changes after creation.
struct Snapshot {
  std::uint64_t id = 0;
  std::map<std::string, AnswerUnit> units;
  std::map<std::string, Chunk> chunks;

  const AnswerUnit* unit(const std::string& unit_id) const;
  const Chunk* chunk(const std::string& chunk_id) const;
};

/// Complete store contents. Compared field-for-field by the replay tests.
struct StoreState {
  std::uint64_t revision = 0;
  std::uint64_t content_revision = 0;  // last unit or chunk change
  std::map<std::string, AnswerUnit> units;
  std::map<std::string, Chunk> chunks;
  std::map<std::string, HarvestCandidate> candidates;
  std::vector<FeedbackEvent> feedback;
  std::map<std::string, Json> sessions;

  bool operator==(const StoreState&) const = default;
};

/// Knowledge store backed by an append-only JSON-lines log.
///
/// Every mutation is validated, appended to `log.jsonl` as
/// {"op","ts","data"} and then applied through the same code path replay
/// uses. Writers are serialized; readers take immutable snapshots.
class Store {
 public:
  /// In-memory store with no persistence.
  explicit Store(Clock clock = system_clock());

  /// Opens (creating if needed) a data directory and replays its latest
  /// compacted snapshot file followed by the remaining log lines. A corrupt
  /// log line raises ParseError with the 1-based line number in details.
  static std::unique_ptr<Store> open(const std::filesystem::path& data_dir, Clock clock = system_clock());

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Insert or replace. A different unit with the same case-folded primary
  /// question is rejected with Conflict; details carry the conflicting id.
  std::string upsert_answer_unit(AnswerUnit unit);
  AnswerUnit add_alternate_question(const std::string& unit_id, const std::string& question);
  std::optional<AnswerUnit> answer_unit(const std::string& unit_id) const;

  void put_chunk(Chunk chunk);
  void put_chunks(std::vector<Chunk> chunks);
  std::optional<Chunk> chunk(const std::string& chunk_id) const;

  /// Target must name an existing answer unit or chunk.
  FeedbackEvent record_feedback(FeedbackEvent event);
  std::vector<FeedbackEvent> feedback() const;

  void put_candidate(HarvestCandidate candidate);
  std::optional<HarvestCandidate> candidate(const std::string& id) const;
  std::vector<HarvestCandidate> candidates() const;

  void put_session(const std::string& session_id, Json session);
  std::optional<Json> session(const std::string& session_id) const;
  std::vector<std::string> session_ids() const;

  std::shared_ptr<const Snapshot> snapshot() const;
  std::uint64_t revision() const;
  StoreState state() const;
  Timestamp now() const { return clock_(); }

  /// Writes snapshots/NNNN.json (NNNN = current snapshot id) holding the full
  /// state plus the number of log lines it covers. Returns the file path.
  std::filesystem::path compact();

  /// Loads a compacted snapshot file written by `compact`.
  static std::shared_ptr<const Snapshot> load_snapshot_file(const std::filesystem::path& path);

  const std::optional<std::filesystem::path>& data_dir() const { return dir_; }

 private:
  void write(const std::string& op, Json data);
  void apply(const std::string& op, const Json& data, Timestamp ts);

  Clock clock_;
  std::optional<std::filesystem::path> dir_;
  std::ofstream log_;
  std::uint64_t log_lines_ = 0;
  bool broken_ = false;

  mutable std::shared_mutex mutex_;
  StoreState state_;
  mutable std::shared_ptr<const Snapshot> cached_snapshot_;
};

}  // namespace deskqa
