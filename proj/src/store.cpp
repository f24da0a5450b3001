#include "deskqa/store.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "deskqa/error.hpp"
#include "deskqa/text.hpp"

namespace deskqa {

namespace fs = std::filesystem;

namespace {

template <typename E>
E enum_from(const std::string& text, std::initializer_list<std::pair<const char*, E>> table) {
  for (const auto& [name, value] : table) {
    if (text == name) return value;
  }
  throw Error(ErrorCode::ParseError, "unknown enum value: " + text);
}

UnitSource unit_source_from(const std::string& s) {
  return enum_from<UnitSource>(s, {{"curated", UnitSource::Curated},
                                   {"mined", UnitSource::Mined},
                                   {"generated", UnitSource::Generated},
                                   {"harvested", UnitSource::Harvested}});
}

}  // namespace

const char* to_string(UnitSource s) {
  switch (s) {
    case UnitSource::Curated: return "curated";
    case UnitSource::Mined: return "mined";
    case UnitSource::Generated: return "generated";
    case UnitSource::Harvested: return "harvested";
  }
  return "curated";
}

const char* to_string(Polarity p) { return p == Polarity::Positive ? "positive" : "negative"; }

const char* to_string(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::Pending: return "pending";
    case CandidateStatus::Approved: return "approved";
    case CandidateStatus::Rejected: return "rejected";
  }
  return "pending";
}

const char* to_string(CandidateOrigin o) {
  return o == CandidateOrigin::SearchFeedback ? "search_feedback" : "agent_conversation";
}

std::vector<std::string> template_placeholders(const std::string& command_template) {
  std::vector<std::string> names;
  std::size_t pos = 0;
  while ((pos = command_template.find('{', pos)) != std::string::npos) {
    auto end = command_template.find('}', pos);
    if (end == std::string::npos) break;
    std::string name = command_template.substr(pos + 1, end - pos - 1);
    if (!name.empty() && std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    pos = end + 1;
  }
  return names;
}

void to_json(Json& j, const AutomatonRef& a) {
  j = Json{{"id", a.id},
           {"description", a.description},
           {"command_template", a.command_template},
           {"required_entities", a.required_entities}};
}

void from_json(const Json& j, AutomatonRef& a) {
  a.id = j.at("id").get<std::string>();
  a.description = j.value("description", "");
  a.command_template = j.at("command_template").get<std::string>();
  a.required_entities = j.value("required_entities", std::vector<std::string>{});
}

void to_json(Json& j, const AnswerUnit& u) {
  j = Json{{"id", u.id},
           {"primary_question", u.primary_question},
           {"alternate_questions", u.alternate_questions},
           {"answer", u.answer},
           {"source", to_string(u.source)},
           {"created_at", u.created_at},
           {"updated_at", u.updated_at},
           {"version", u.version},
           {"revision", u.revision}};
  if (u.automaton) j["automaton"] = *u.automaton;
}

void from_json(const Json& j, AnswerUnit& u) {
  u.id = j.at("id").get<std::string>();
  u.primary_question = j.at("primary_question").get<std::string>();
  u.alternate_questions = j.value("alternate_questions", std::vector<std::string>{});
  u.answer = j.at("answer").get<std::string>();
  u.source = unit_source_from(j.value("source", "curated"));
  u.created_at = j.value("created_at", Timestamp{0});
  u.updated_at = j.value("updated_at", Timestamp{0});
  u.version = j.value("version", std::uint64_t{0});
  u.revision = j.value("revision", std::uint64_t{0});
  if (j.contains("automaton") && !j["automaton"].is_null()) {
    u.automaton = j["automaton"].get<AutomatonRef>();
  } else {
    u.automaton.reset();
  }
}

void to_json(Json& j, const Chunk& c) {
  j = Json{{"id", c.id},
           {"source_id", c.source_id},
           {"heading_path", c.heading_path},
           {"body", c.body},
           {"token_count", c.token_count}};
  if (c.time_anchor) j["time_anchor"] = Json::array({c.time_anchor->start_seconds, c.time_anchor->end_seconds});
}

void from_json(const Json& j, Chunk& c) {
  c.id = j.at("id").get<std::string>();
  c.source_id = j.value("source_id", "");
  c.heading_path = j.value("heading_path", std::vector<std::string>{});
  c.body = j.at("body").get<std::string>();
  c.token_count = j.value("token_count", std::size_t{0});
  if (j.contains("time_anchor") && j["time_anchor"].is_array()) {
    c.time_anchor = TimeAnchor{j["time_anchor"][0].get<double>(), j["time_anchor"][1].get<double>()};
  } else {
    c.time_anchor.reset();
  }
}

void to_json(Json& j, const FeedbackEvent& f) {
  j = Json{{"session_id", f.session_id},
           {"turn_index", f.turn_index},
           {"target", f.target},
           {"polarity", to_string(f.polarity)},
           {"timestamp", f.timestamp}};
}

void from_json(const Json& j, FeedbackEvent& f) {
  f.session_id = j.at("session_id").get<std::string>();
  f.turn_index = j.at("turn_index").get<std::size_t>();
  f.target = j.at("target").get<std::string>();
  f.polarity = enum_from<Polarity>(j.at("polarity").get<std::string>(),
                                   {{"positive", Polarity::Positive}, {"negative", Polarity::Negative}});
  f.timestamp = j.value("timestamp", Timestamp{0});
}

void to_json(Json& j, const HarvestCandidate& c) {
  Json history = Json::array();
  for (const auto& h : c.history) history.push_back(Json{{"at", h.at}, {"weight", h.weight}});
  j = Json{{"id", c.id},
           {"question", c.question},
           {"answer_source", c.answer_source},
           {"answer_text", c.answer_text},
           {"weight", c.weight},
           {"status", to_string(c.status)},
           {"created_from", to_string(c.created_from)},
           {"ready_for_review", c.ready_for_review},
           {"history", history},
           {"created_at", c.created_at},
           {"decided_at", c.decided_at},
           {"reviewer", c.reviewer},
           {"promoted_unit_id", c.promoted_unit_id}};
}

void from_json(const Json& j, HarvestCandidate& c) {
  c.id = j.at("id").get<std::string>();
  c.question = j.at("question").get<std::string>();
  c.answer_source = j.at("answer_source").get<std::string>();
  c.answer_text = j.value("answer_text", "");
  c.weight = j.value("weight", std::uint64_t{0});
  c.status = enum_from<CandidateStatus>(j.value("status", "pending"), {{"pending", CandidateStatus::Pending},
                                                                       {"approved", CandidateStatus::Approved},
                                                                       {"rejected", CandidateStatus::Rejected}});
  c.created_from = enum_from<CandidateOrigin>(j.value("created_from", "search_feedback"),
                                              {{"search_feedback", CandidateOrigin::SearchFeedback},
                                               {"agent_conversation", CandidateOrigin::AgentConversation}});
  c.ready_for_review = j.value("ready_for_review", false);
  c.history.clear();
  for (const auto& h : j.value("history", Json::array())) {
    c.history.push_back(WeightUpdate{h.at("at").get<Timestamp>(), h.at("weight").get<std::uint64_t>()});
  }
  c.created_at = j.value("created_at", Timestamp{0});
  c.decided_at = j.value("decided_at", Timestamp{0});
  c.reviewer = j.value("reviewer", "");
  c.promoted_unit_id = j.value("promoted_unit_id", "");
}

void validate(const AnswerUnit& unit) {
  if (unit.id.empty()) throw Error(ErrorCode::InvalidArgument, "answer unit id is empty");
  if (trim(unit.primary_question).empty()) {
    throw Error(ErrorCode::InvalidArgument, "primary question is empty", unit.id);
  }
  if (trim(strip_tags(unit.answer)).empty() && unit.answer.find("<img") == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "answer is empty", unit.id);
  }
  const std::string primary = casefold(unit.primary_question);
  for (const auto& alt : unit.alternate_questions) {
    if (casefold(alt) == primary) {
      throw Error(ErrorCode::InvalidArgument, "alternate question repeats the primary question", unit.id);
    }
  }
  if (unit.automaton) {
    const auto& a = *unit.automaton;
    for (const auto& name : template_placeholders(a.command_template)) {
      if (std::find(a.required_entities.begin(), a.required_entities.end(), name) == a.required_entities.end()) {
        throw Error(ErrorCode::InvalidArgument, "automaton placeholder {" + name + "} is not a required entity",
                    a.id);
      }
    }
  }
}

void validate(const Chunk& chunk) {
  if (chunk.id.empty()) throw Error(ErrorCode::InvalidArgument, "chunk id is empty");
  if (trim(chunk.body).empty()) throw Error(ErrorCode::InvalidArgument, "chunk body is empty", chunk.id);
  if (chunk.time_anchor) {
    const auto& t = *chunk.time_anchor;
    if (!(t.start_seconds >= 0 && t.start_seconds < t.end_seconds)) {
      throw Error(ErrorCode::InvalidArgument, "chunk time anchor must satisfy 0 <= start < end", chunk.id);
    }
  }
}

const AnswerUnit* Snapshot::unit(const std::string& unit_id) const {
  auto it = units.find(unit_id);
  return it == units.end() ? nullptr : &it->second;
}

const Chunk* Snapshot::chunk(const std::string& chunk_id) const {
  auto it = chunks.find(chunk_id);
  return it == chunks.end() ? nullptr : &it->second;
}

Store::Store(Clock clock) : clock_(std::move(clock)) {}

std::unique_ptr<Store> Store::open(const fs::path& data_dir, Clock clock) {
  auto store = std::make_unique<Store>(std::move(clock));
  fs::create_directories(data_dir / "snapshots");
  store->dir_ = data_dir;

  std::uint64_t skip_lines = 0;
  fs::path latest;
  std::uint64_t latest_id = 0;
  for (const auto& entry : fs::directory_iterator(data_dir / "snapshots")) {
    if (entry.path().extension() != ".json") continue;
    std::uint64_t id = 0;
    try {
      id = std::stoull(entry.path().stem().string());
    } catch (const std::exception&) {
      continue;
    }
    if (latest.empty() || id > latest_id) {
      latest = entry.path();
      latest_id = id;
    }
  }
  if (!latest.empty()) {
    std::ifstream in(latest);
    Json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError, "corrupt snapshot file " + latest.string() + ": " + e.what());
    }
    auto& st = store->state_;
    st.revision = j.at("revision").get<std::uint64_t>();
    st.content_revision = j.at("content_revision").get<std::uint64_t>();
    for (const auto& u : j.at("units")) {
      auto unit = u.get<AnswerUnit>();
      st.units.emplace(unit.id, unit);
    }
    for (const auto& c : j.at("chunks")) {
      auto chunk = c.get<Chunk>();
      st.chunks.emplace(chunk.id, chunk);
    }
    for (const auto& c : j.value("candidates", Json::array())) {
      auto cand = c.get<HarvestCandidate>();
      st.candidates.emplace(cand.id, cand);
    }
    for (const auto& f : j.value("feedback", Json::array())) st.feedback.push_back(f.get<FeedbackEvent>());
    for (const auto& [id, s] : j.value("sessions", Json::object()).items()) st.sessions.emplace(id, s);
    skip_lines = j.at("log_lines").get<std::uint64_t>();
  }

  const fs::path log_path = data_dir / "log.jsonl";
  {
    std::ifstream in(log_path);
    std::string line;
    std::uint64_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line_no <= skip_lines) continue;
      if (trim(line).empty()) {
        throw Error(ErrorCode::ParseError, "log replay failed at line " + std::to_string(line_no) + ": empty line",
                    std::to_string(line_no));
      }
      try {
        Json rec = Json::parse(line);
        store->apply(rec.at("op").get<std::string>(), rec.at("data"), parse_rfc3339(rec.at("ts").get<std::string>()));
      } catch (const std::exception& e) {
        throw Error(ErrorCode::ParseError,
                    "log replay failed at line " + std::to_string(line_no) + ": " + e.what(),
                    std::to_string(line_no));
      }
    }
    store->log_lines_ = line_no;
  }
  store->log_.open(log_path, std::ios::app);
  if (!store->log_) throw Error(ErrorCode::Io, "cannot open log for writing: " + log_path.string());
  return store;
}

void Store::write(const std::string& op, Json data) {
  // Caller holds the unique lock.
  if (broken_) throw Error(ErrorCode::Unavailable, "store is read-only after a failed log append");
  const Timestamp ts = clock_();
  apply(op, data, ts);
  if (dir_) {
    Json rec{{"op", op}, {"ts", format_rfc3339(ts)}, {"data", std::move(data)}};
    log_ << rec.dump() << '\n';
    log_.flush();
    if (!log_) {
      // Live state is now ahead of the log; refuse further writes.
      broken_ = true;
      throw Error(ErrorCode::Io, "failed to append to log");
    }
    ++log_lines_;
  }
}

void Store::apply(const std::string& op, const Json& data, Timestamp ts) {
  auto& st = state_;
  if (op == "upsert_unit") {
    AnswerUnit unit = data.get<AnswerUnit>();
    unit.answer = sanitize_html(unit.answer);
    validate(unit);
    const std::string folded = casefold(unit.primary_question);
    for (const auto& [id, other] : st.units) {
      if (id != unit.id && casefold(other.primary_question) == folded) {
        throw Error(ErrorCode::Conflict, "primary question already used by " + id, id);
      }
    }
    ++st.revision;
    auto it = st.units.find(unit.id);
    if (it == st.units.end()) {
      unit.version = 1;
      unit.created_at = ts;
    } else {
      unit.version = it->second.version + 1;
      unit.created_at = it->second.created_at;
    }
    unit.updated_at = ts;
    unit.revision = st.revision;
    st.content_revision = st.revision;
    st.units[unit.id] = std::move(unit);
  } else if (op == "add_alternate") {
    const auto id = data.at("id").get<std::string>();
    const auto question = trim(data.at("question").get<std::string>());
    auto it = st.units.find(id);
    if (it == st.units.end()) throw Error(ErrorCode::NotFound, "unknown answer unit " + id, id);
    if (question.empty()) throw Error(ErrorCode::InvalidArgument, "alternate question is empty", id);
    const std::string folded = casefold(question);
    auto& unit = it->second;
    if (casefold(unit.primary_question) == folded) {
      throw Error(ErrorCode::InvalidArgument, "alternate question repeats the primary question", id);
    }
    for (const auto& alt : unit.alternate_questions) {
      if (casefold(alt) == folded) return;  // idempotent; recorded but no-op
    }
    ++st.revision;
    unit.alternate_questions.push_back(question);
    unit.version += 1;
    unit.updated_at = ts;
    unit.revision = st.revision;
    st.content_revision = st.revision;
  } else if (op == "put_chunks") {
    std::vector<Chunk> chunks;
    for (const auto& c : data.at("chunks")) {
      chunks.push_back(c.get<Chunk>());
      chunks.back().body = sanitize_html(chunks.back().body);
      validate(chunks.back());
    }
    ++st.revision;
    st.content_revision = st.revision;
    for (auto& c : chunks) st.chunks[c.id] = std::move(c);
  } else if (op == "feedback") {
    FeedbackEvent ev = data.get<FeedbackEvent>();
    if (st.units.count(ev.target) == 0 && st.chunks.count(ev.target) == 0) {
      throw Error(ErrorCode::NotFound, "feedback target does not exist: " + ev.target, ev.target);
    }
    ++st.revision;
    st.feedback.push_back(std::move(ev));
  } else if (op == "put_candidate") {
    HarvestCandidate cand = data.get<HarvestCandidate>();
    if (cand.id.empty()) throw Error(ErrorCode::InvalidArgument, "candidate id is empty");
    ++st.revision;
    st.candidates[cand.id] = std::move(cand);
  } else if (op == "put_session") {
    ++st.revision;
    st.sessions[data.at("id").get<std::string>()] = data.at("session");
  } else {
    throw Error(ErrorCode::ParseError, "unknown log op: " + op);
  }
}

std::string Store::upsert_answer_unit(AnswerUnit unit) {
  std::unique_lock lock(mutex_);
  unit.answer = sanitize_html(unit.answer);
  write("upsert_unit", Json(unit));
  return unit.id;
}

AnswerUnit Store::add_alternate_question(const std::string& unit_id, const std::string& question) {
  std::unique_lock lock(mutex_);
  auto it = state_.units.find(unit_id);
  if (it == state_.units.end()) throw Error(ErrorCode::NotFound, "unknown answer unit " + unit_id, unit_id);
  const std::string folded = casefold(trim(question));
  for (const auto& alt : it->second.alternate_questions) {
    if (casefold(alt) == folded) return it->second;
  }
  write("add_alternate", Json{{"id", unit_id}, {"question", question}});
  return state_.units.at(unit_id);
}

std::optional<AnswerUnit> Store::answer_unit(const std::string& unit_id) const {
  std::shared_lock lock(mutex_);
  auto it = state_.units.find(unit_id);
  if (it == state_.units.end()) return std::nullopt;
  return it->second;
}

void Store::put_chunk(Chunk chunk) {
  std::vector<Chunk> one;
  one.push_back(std::move(chunk));
  put_chunks(std::move(one));
}

void Store::put_chunks(std::vector<Chunk> chunks) {
  if (chunks.empty()) return;
  std::unique_lock lock(mutex_);
  Json arr = Json::array();
  for (const auto& c : chunks) arr.push_back(c);
  write("put_chunks", Json{{"chunks", std::move(arr)}});
}

std::optional<Chunk> Store::chunk(const std::string& chunk_id) const {
  std::shared_lock lock(mutex_);
  auto it = state_.chunks.find(chunk_id);
  if (it == state_.chunks.end()) return std::nullopt;
  return it->second;
}

FeedbackEvent Store::record_feedback(FeedbackEvent event) {
  std::unique_lock lock(mutex_);
  if (event.timestamp == 0) event.timestamp = clock_();
  write("feedback", Json(event));
  return event;
}

std::vector<FeedbackEvent> Store::feedback() const {
  std::shared_lock lock(mutex_);
  return state_.feedback;
}

void Store::put_candidate(HarvestCandidate candidate) {
  std::unique_lock lock(mutex_);
  write("put_candidate", Json(candidate));
}

std::optional<HarvestCandidate> Store::candidate(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = state_.candidates.find(id);
  if (it == state_.candidates.end()) return std::nullopt;
  return it->second;
}

std::vector<HarvestCandidate> Store::candidates() const {
  std::shared_lock lock(mutex_);
  std::vector<HarvestCandidate> out;
  out.reserve(state_.candidates.size());
  for (const auto& [id, c] : state_.candidates) out.push_back(c);
  return out;
}

void Store::put_session(const std::string& session_id, Json session) {
  std::unique_lock lock(mutex_);
  write("put_session", Json{{"id", session_id}, {"session", std::move(session)}});
}

std::optional<Json> Store::session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = state_.sessions.find(session_id);
  if (it == state_.sessions.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Store::session_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, s] : state_.sessions) ids.push_back(id);
  return ids;
}

std::shared_ptr<const Snapshot> Store::snapshot() const {
  std::unique_lock lock(mutex_);
  if (cached_snapshot_ && cached_snapshot_->id == state_.content_revision) return cached_snapshot_;
  auto snap = std::make_shared<Snapshot>();
  snap->id = state_.content_revision;
  snap->units = state_.units;
  snap->chunks = state_.chunks;
  cached_snapshot_ = snap;
  return snap;
}

std::uint64_t Store::revision() const {
  std::shared_lock lock(mutex_);
  return state_.revision;
}

StoreState Store::state() const {
  std::shared_lock lock(mutex_);
  return state_;
}

fs::path Store::compact() {
  std::unique_lock lock(mutex_);
  if (!dir_) throw Error(ErrorCode::FailedPrecondition, "in-memory store has no data directory");
  Json j;
  j["revision"] = state_.revision;
  j["content_revision"] = state_.content_revision;
  j["log_lines"] = log_lines_;
  j["units"] = Json::array();
  for (const auto& [id, u] : state_.units) j["units"].push_back(u);
  j["chunks"] = Json::array();
  for (const auto& [id, c] : state_.chunks) j["chunks"].push_back(c);
  j["candidates"] = Json::array();
  for (const auto& [id, c] : state_.candidates) j["candidates"].push_back(c);
  j["feedback"] = state_.feedback;
  j["sessions"] = Json::object();
  for (const auto& [id, s] : state_.sessions) j["sessions"][id] = s;

  char name[32];
  std::snprintf(name, sizeof name, "%04llu.json", static_cast<unsigned long long>(state_.content_revision));
  const fs::path path = *dir_ / "snapshots" / name;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << j.dump(1) << '\n';
    if (!out) throw Error(ErrorCode::Io, "failed to write snapshot " + tmp.string());
  }
  fs::rename(tmp, path);
  return path;
}

std::shared_ptr<const Snapshot> Store::load_snapshot_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "snapshot file not found: " + path.string());
  Json j;
  in >> j;
  auto snap = std::make_shared<Snapshot>();
  snap->id = j.at("content_revision").get<std::uint64_t>();
  for (const auto& u : j.at("units")) {
    auto unit = u.get<AnswerUnit>();
    snap->units.emplace(unit.id, unit);
  }
  for (const auto& c : j.at("chunks")) {
    auto chunk = c.get<Chunk>();
    snap->chunks.emplace(chunk.id, chunk);
  }
  return snap;
}

}  // namespace deskqa
