#include "deskqa/harvest.hpp"

#include <algorithm>
#include <fstream>

#include "deskqa/error.hpp"
#include "deskqa/text.hpp"

namespace deskqa::harvest {

using orchestrate::Actor;
using orchestrate::Session;
using orchestrate::TurnKind;

std::vector<std::string> HarvestConfig::load_cues(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read cue file", path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad cue file: ") + e.what(), path.string());
  }
  auto cues = j.at("cues").get<std::vector<std::string>>();
  for (auto& c : cues) c = casefold(trim(c));
  std::erase_if(cues, [](const std::string& c) { return c.empty(); });
  return cues;
}

std::string candidate_key(const std::string& question, const std::string& answer_source) {
  return hex64(fnv1a64(casefold(collapse_whitespace(trim(question))) + '\x1f' + answer_source));
}

namespace {

bool has_cue(const std::string& text, const std::vector<std::string>& cues) {
  for (const auto& t : tokenize(text)) {
    if (std::find(cues.begin(), cues.end(), t) != cues.end()) return true;
  }
  return false;
}

}  // namespace

std::vector<Pairing> find_pairings(const Session& session, const HarvestConfig& config) {
  std::vector<Pairing> out;
  if (!session.handoff_turn) return out;
  std::string question = session.active_question;
  std::optional<std::size_t> answer;  // long agent turn awaiting acknowledgement
  bool resolved = false;
  for (std::size_t i = *session.handoff_turn + 1; i < session.turns.size(); ++i) {
    const auto& t = session.turns[i];
    if (t.actor == Actor::Agent) {
      if (!answer && !resolved && tokenize(t.text).size() >= config.min_agent_tokens) answer = i;
    } else if (t.actor == Actor::User) {
      if (has_cue(t.text, config.ack_cues)) {
        if (answer && !question.empty()) {
          out.push_back({question, *answer, session.turns[*answer].text});
          resolved = true;
        }
        answer.reset();
      } else {
        // Any other user turn opens the next exchange.
        question = t.text;
        answer.reset();
        resolved = false;
      }
    }
  }
  return out;
}

Harvester::Harvester(Store& store, HarvestConfig config) : store_(store), config_(std::move(config)) {
  if (config_.w_promote == 0) throw Error(ErrorCode::InvalidArgument, "W_promote must be positive");
  for (auto& c : config_.ack_cues) c = casefold(c);
}

HarvestCandidate Harvester::bump(const std::string& question, const std::string& source,
                                 const std::string& answer_text, CandidateOrigin origin, bool* suppressed) {
  const std::string key = candidate_key(question, source);
  const Timestamp now = store_.now();
  std::optional<HarvestCandidate> latest;
  std::size_t generations = 0;
  for (auto& c : store_.candidates()) {
    if (c.id != key && c.id.rfind(key + "-", 0) != 0) continue;
    ++generations;
    if (!latest || c.created_at > latest->created_at || (c.created_at == latest->created_at && c.id > latest->id)) {
      latest = std::move(c);
    }
  }
  *suppressed = false;
  HarvestCandidate c;
  if (latest && latest->status == CandidateStatus::Pending) {
    c = std::move(*latest);
  } else if (latest && latest->status == CandidateStatus::Rejected && now - latest->decided_at < config_.reject_suppression) {
    *suppressed = true;
    return *latest;
  } else if (latest && latest->status == CandidateStatus::Approved) {
    // Already promoted: further signals are recorded on the approved pair.
    c = std::move(*latest);
  } else {
    c.id = generations == 0 ? key : key + "-" + std::to_string(generations);
    c.question = trim(question);
    c.answer_source = source;
    c.answer_text = answer_text;
    c.created_from = origin;
    c.created_at = now;
  }
  ++c.weight;
  c.history.push_back({now, c.weight});
  if (c.status == CandidateStatus::Pending && c.weight >= config_.w_promote) c.ready_for_review = true;
  store_.put_candidate(c);
  return c;
}

std::optional<HarvestCandidate> Harvester::search_feedback(const std::string& question, const std::string& chunk_id,
                                                           Polarity polarity) {
  if (!store_.chunk(chunk_id)) throw Error(ErrorCode::NotFound, "unknown chunk " + chunk_id, chunk_id);
  if (trim(question).empty()) throw Error(ErrorCode::InvalidArgument, "empty question");
  std::lock_guard lock(mu_);
  const std::string key = candidate_key(question, chunk_id);
  if (polarity == Polarity::Negative) {
    std::optional<HarvestCandidate> existing;
    for (auto& c : store_.candidates()) {
      if (c.id == key || c.id.rfind(key + "-", 0) == 0) existing = std::move(c);
    }
    return existing;
  }
  bool suppressed = false;
  auto c = bump(question, chunk_id, "", CandidateOrigin::SearchFeedback, &suppressed);
  if (suppressed) return std::nullopt;
  return c;
}

std::vector<HarvestCandidate> Harvester::agent_conversation(const Session& session) {
  std::lock_guard lock(mu_);
  std::vector<HarvestCandidate> out;
  for (const auto& p : find_pairings(session, config_)) {
    const std::string source = "agent:" + session.id + ":" + std::to_string(p.agent_turn);
    bool suppressed = false;
    auto c = bump(p.question, source, p.answer, CandidateOrigin::AgentConversation, &suppressed);
    if (!suppressed) out.push_back(std::move(c));
  }
  return out;
}

ReviewOutcome Harvester::review(const std::string& candidate_id, const Decision& decision,
                                const std::string& reviewer) {
  std::lock_guard lock(mu_);
  auto found = store_.candidate(candidate_id);
  if (!found) throw Error(ErrorCode::NotFound, "unknown candidate " + candidate_id, candidate_id);
  HarvestCandidate c = std::move(*found);
  if (c.status != CandidateStatus::Pending) {
    throw Error(ErrorCode::Conflict, "candidate already " + std::string(to_string(c.status)), candidate_id);
  }
  ReviewOutcome outcome;
  c.reviewer = reviewer;
  if (decision.approve) {
    AnswerUnit unit;
    unit.id = "H-" + c.id;
    unit.primary_question = trim(decision.question.value_or(c.question));
    if (decision.answer) {
      unit.answer = sanitize_html(*decision.answer);
    } else if (c.created_from == CandidateOrigin::SearchFeedback) {
      auto chunk = store_.chunk(c.answer_source);
      if (!chunk) throw Error(ErrorCode::NotFound, "source chunk is gone", c.answer_source);
      unit.answer = chunk->body;
    } else {
      unit.answer = "<p>" + html_escape(c.answer_text) + "</p>";
    }
    unit.source = UnitSource::Harvested;
    outcome.unit_id = store_.upsert_answer_unit(unit);
    c.status = CandidateStatus::Approved;
    c.promoted_unit_id = *outcome.unit_id;
  } else {
    c.status = CandidateStatus::Rejected;
  }
  c.decided_at = store_.now();
  store_.put_candidate(c);
  outcome.candidate = std::move(c);
  return outcome;
}

std::vector<HarvestCandidate> Harvester::queue(bool ready_only) const {
  std::vector<HarvestCandidate> out;
  for (auto& c : store_.candidates()) {
    if (c.status != CandidateStatus::Pending) continue;
    if (ready_only && !c.ready_for_review) continue;
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const HarvestCandidate& a, const HarvestCandidate& b) {
    if (a.ready_for_review != b.ready_for_review) return a.ready_for_review;
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.id < b.id;
  });
  return out;
}

void Harvester::export_jsonl(std::ostream& out) const {
  for (const auto& c : store_.candidates()) out << Json(c).dump() << '\n';
}

void Harvester::on_search_feedback(const std::string& question, const std::string& chunk_id, Polarity polarity) {
  search_feedback(question, chunk_id, polarity);
}

void Harvester::on_agent_conversation(const Session& session) { agent_conversation(session); }

}  // namespace deskqa::harvest
