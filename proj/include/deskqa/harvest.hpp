#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deskqa/orchestrate.hpp"
#include "deskqa/store.hpp"

namespace deskqa::harvest {

struct HarvestConfig {
  std::uint64_t w_promote = 3;
  Timestamp reject_suppression = 30LL * 24 * 3600 * 1000000;  // microseconds
  std::size_t min_agent_tokens = 10;
  std::vector<std::string> ack_cues = {"thanks", "works", "solved", "great", "resolved"};

  /// Reads {"cues": [...]} as written by the cue data file.
  static std::vector<std::string> load_cues(const std::filesystem::path& path);
};

/// Stable identifier of a (case-folded question, answer source) pair.
std::string candidate_key(const std::string& question, const std::string& answer_source);

struct Pairing {
  std::string question;
  std::size_t agent_turn = 0;
  std::string answer;
};

/// User question paired with the agent reply a later user turn acknowledges.
std::vector<Pairing> find_pairings(const orchestrate::Session& session, const HarvestConfig& config);

struct Decision {
  bool approve = false;
  std::optional<std::string> question;  // edited question
  std::optional<std::string> answer;    // edited answer
};

struct ReviewOutcome {
  HarvestCandidate candidate;
  std::optional<std::string> unit_id;
};

/// Accumulates QA candidates and runs the review queue. Writes go through
/// the store, so weights and decisions survive restarts.
class Harvester final : public orchestrate::FeedbackListener {
 public:
  explicit Harvester(Store& store, HarvestConfig config = {});

  /// Positive signals add one to the weight of the (question, chunk)
  /// candidate; negative ones are ignored. A rejected pair stays
  /// suppressed for the configured period and returns nullopt.
  std::optional<HarvestCandidate> search_feedback(const std::string& question, const std::string& chunk_id,
                                                  Polarity polarity);

  std::vector<HarvestCandidate> agent_conversation(const orchestrate::Session& session);

  ReviewOutcome review(const std::string& candidate_id, const Decision& decision, const std::string& reviewer);

  std::vector<HarvestCandidate> queue(bool ready_only = false) const;
  void export_jsonl(std::ostream& out) const;

  void on_search_feedback(const std::string& question, const std::string& chunk_id, Polarity polarity) override;
  void on_agent_conversation(const orchestrate::Session& session) override;

  const HarvestConfig& config() const { return config_; }

 private:
  HarvestCandidate bump(const std::string& question, const std::string& source, const std::string& answer_text,
                        CandidateOrigin origin, bool* suppressed);

  Store& store_;
  HarvestConfig config_;
  std::mutex mu_;
};

}  // namespace deskqa::harvest
