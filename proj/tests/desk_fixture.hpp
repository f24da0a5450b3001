#pragma once

#include <memory>
#include <string>
#include <vector>

#include "deskqa/classify.hpp"
#include "deskqa/harvest.hpp"
#include "deskqa/orchestrate.hpp"
#include "deskqa/store.hpp"
#include "deskqa/text.hpp"

namespace deskqa::testing {

inline AnswerUnit make_unit(std::string id, std::string question, std::string answer) {
  AnswerUnit u;
  u.id = std::move(id);
  u.primary_question = std::move(question);
  u.answer = std::move(answer);
  return u;
}

/// The four card questions of the banking example.
inline std::vector<AnswerUnit> card_units() {
  return {
      make_unit("debit-new", "How can I get a new debit card?", "<p>Order a new debit card from the Cards page.</p>"),
      make_unit("credit-new", "What is the process to get a new credit card?",
                "<p>Apply for a credit card online; approval takes two days.</p>"),
      make_unit("debit-duplicate", "I want a duplicate debit card",
                "<p>Request a duplicate debit card at any branch.</p>"),
      make_unit("credit-duplicate", "How do I get a duplicate credit card?",
                "<p>Call the card desk to block the old credit card and receive a duplicate.</p>"),
  };
}

inline AnswerUnit password_unit() {
  auto u = make_unit("password-reset", "How do I reset my password?",
                     "<p>Your password can be reset by the help desk robot.</p>");
  u.alternate_questions = {"I forgot my password", "password reset please", "reset password for my account"};
  u.automaton = AutomatonRef{"reset-password", "I can reset your password now.", "reset-password --user {user_id}",
                             {"user_id"}};
  return u;
}

inline std::vector<AnswerUnit> support_units() {
  std::vector<AnswerUnit> out = {
      password_unit(),
      make_unit("vpn", "Why does the VPN client fail to connect?", "<p>Reinstall the VPN profile.</p>"),
      make_unit("printer", "How do I add a network printer?", "<p>Use Settings, Printers, Add.</p>"),
  };
  out[1].alternate_questions = {"vpn connection drops", "cannot connect to vpn"};
  out[2].alternate_questions = {"add printer", "printer setup on the network"};
  return out;
}

inline std::vector<Chunk> support_chunks() {
  auto chunk = [](std::string id, std::vector<std::string> path, std::string body) {
    Chunk c;
    c.id = std::move(id);
    c.source_id = "manual";
    c.heading_path = std::move(path);
    c.body = std::move(body);
    c.token_count = tokenize(c.body).size();
    return c;
  };
  return {
      chunk("c-mail", {"Mail", "Quota"}, "<p>When the mailbox quota is exceeded archive old mail to free space.</p>"),
      chunk("c-badge", {"Facilities", "Badges"}, "<p>Lost badges are replaced at the security desk on floor two.</p>"),
      chunk("c-wifi", {"Network", "Wireless"}, "<p>Guest wireless access needs a voucher from reception.</p>"),
  };
}

/// Store, model and orchestrator wired together in memory.
struct Desk {
  explicit Desk(const std::vector<AnswerUnit>& units, const std::vector<Chunk>& chunks = {},
                orchestrate::OrchestratorConfig config = {}, Clock clock = manual_clock(1'700'000'000'000'000))
      : store(std::move(clock)), harvester(store) {
    for (const auto& u : units) store.upsert_answer_unit(u);
    if (!chunks.empty()) store.put_chunks(chunks);
    retrain();
    orchestrator = std::make_unique<orchestrate::Orchestrator>(store, knowledge, adapter, queue, config, &harvester);
  }

  void retrain() {
    const auto snap = store.snapshot();
    std::shared_ptr<const classify::QuestionClassifier> model;
    if (snap->units.size() >= 2) {
      auto m = std::make_shared<classify::LinearModel>(classify::train(classify::training_set_from(*snap)));
      m->set_snapshot_id(snap->id);
      linear = m;
      model = m;
    }
    knowledge.publish(orchestrate::build_knowledge(store, model));
  }

  orchestrate::Orchestrator& o() { return *orchestrator; }

  Store store;
  orchestrate::KnowledgeSource knowledge;
  orchestrate::FakeExecutionAdapter adapter;
  orchestrate::AgentQueue queue;
  harvest::Harvester harvester;
  std::shared_ptr<const classify::LinearModel> linear;
  std::unique_ptr<orchestrate::Orchestrator> orchestrator;
};

}  // namespace deskqa::testing
