#include <doctest.h>

#include <random>
#include <thread>

#include "deskqa/error.hpp"
#include "desk_fixture.hpp"
#include "orchestrator_model.hpp"

using namespace deskqa;
using namespace deskqa::orchestrate;
using deskqa::testing::Desk;

namespace {

std::vector<AnswerUnit> all_units() {
  auto units = deskqa::testing::card_units();
  for (auto& u : deskqa::testing::support_units()) units.push_back(u);
  return units;
}

OrchestratorConfig support_config() {
  auto c = deskqa::testing::model_config();
  c.top_k = 5;
  return c;
}

const Turn& last_system(const Session& s) {
  for (auto it = s.turns.rbegin(); it != s.turns.rend(); ++it) {
    if (it->actor == Actor::System) return *it;
  }
  throw std::runtime_error("no system turn");
}

}  // namespace

TEST_CASE("normalize_input") {
  vision::Vocabulary vocab({"reset", "password", "account"});
  auto n = normalize_input("reset my pasword", vocab);
  CHECK(n.intent == Intent::Statement);
  CHECK(std::find(n.entities.begin(), n.entities.end(), "password") != n.entities.end());
  CHECK(normalize_input("", vocab).intent == Intent::Noop);
  CHECK(normalize_input("  ?! ", vocab).intent == Intent::Noop);
  CHECK(normalize_input("How do I reset it", vocab).intent == Intent::Question);

  auto g = disambig::build_graph(
      {{"A", "How can I get a new debit card?"}, {"B", "How do I get a duplicate credit card?"}});
  auto pending = disambig::render_question(*disambig::best_bucket(g));
  REQUIRE(pending.options.size() == 2);
  auto c = normalize_input("Credit Card", vocab, &pending);
  CHECK(c.intent == Intent::ChoiceReply);
  REQUIRE(c.choice);
  CHECK(pending.options[*c.choice] == "Credit Card");
  CHECK(normalize_input("the debit one", vocab, &pending).intent == Intent::ChoiceReply);
  CHECK(normalize_input("what is a card?", vocab, &pending).intent == Intent::Question);
}

TEST_CASE("bind_entities and consent replies") {
  CHECK(bind_entities("my user id is jdoe", {"user_id"}) == std::map<std::string, std::string>{{"user_id", "jdoe"}});
  CHECK(bind_entities("user_id: a.b@corp", {"user_id"}).at("user_id") == "a.b@corp");
  CHECK(bind_entities("USER-ID=x7", {"user_id"}).at("user_id") == "x7");
  CHECK(bind_entities("reset my password", {"user_id"}).empty());
  CHECK(consent_reply("yes please") == true);
  CHECK(consent_reply("OK") == true);
  CHECK(consent_reply("no") == false);
  CHECK(consent_reply("please do not") == false);
  CHECK_FALSE(consent_reply("what does it do to my files").has_value());
  CHECK_FALSE(consent_reply("ok but what will it do?").has_value());
  CHECK(consent_reply("go ahead") == true);
  CHECK(entity_prompt("user_id") == "What is your user id?");
}

TEST_CASE("config validation") {
  OrchestratorConfig c;
  CHECK_NOTHROW(c.validate());
  c.theta_disambig = 0.8;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.top_k = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.theta_answer = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("transition table matches the written-out model") {
  const std::vector<Phase> all = {Phase::AwaitingQuestion, Phase::Disambiguating, Phase::AnswerShown,
                                  Phase::AutomatonPending, Phase::Searching,      Phase::HandedOff,
                                  Phase::Closed};
  for (auto a : all) {
    for (auto b : all) CHECK(legal_transition(a, b) == (a != b && deskqa::testing::model_allows(a, b)));
  }
}

TEST_CASE("banking example narrows to the duplicate credit card answer") {
  Desk desk(deskqa::testing::card_units());
  const auto id = desk.o().create_session();

  auto out = desk.o().handle_message(id, "How do I get a card?");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::Clarify);
  CHECK(out[0].text == "Do you need a Debit Card or Credit Card?");
  CHECK(out[0].payload.at("options") == Json::array({"Debit Card", "Credit Card"}));
  auto s = desk.o().session(id);
  CHECK(s.phase == Phase::Disambiguating);
  CHECK(s.graph.has_value());
  CHECK(s.candidates.front().confidence < desk.o().config().theta_answer);

  out = desk.o().handle_message(id, "Credit Card");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::Clarify);
  CHECK(out[0].text == "Do you want to apply for a new card or a duplicate card?");

  out = desk.o().handle_message(id, "duplicate");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::Answer);
  CHECK(out[0].payload.at("unit_id") == "credit-duplicate");
  s = desk.o().session(id);
  CHECK(s.phase == Phase::AnswerShown);
  CHECK_FALSE(s.graph.has_value());
  CHECK(s.clarify_turns == 2);
  CHECK(s.turns[2].kind == TurnKind::Choice);
  CHECK(s.turns[4].kind == TurnKind::Choice);
}

TEST_CASE("the clarification cap falls back to search") {
  OrchestratorConfig config;
  config.max_clarify_turns = 1;
  Desk desk(deskqa::testing::card_units(), {}, config);
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "How do I get a card?");
  auto out = desk.o().handle_message(id, "Credit Card");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::SearchResults);
  CHECK(desk.o().session(id).clarify_turns == 1);
}

TEST_CASE("confident questions are answered directly and gibberish falls back to search") {
  Desk desk(all_units(), deskqa::testing::support_chunks(), support_config());
  const auto id = desk.o().create_session();
  auto out = desk.o().handle_message(id, "How do I add a network printer?");
  REQUIRE_FALSE(out.empty());
  CHECK(out[0].kind == TurnKind::Answer);
  CHECK(out[0].payload.at("unit_id") == "printer");

  const auto other = desk.o().create_session();
  out = desk.o().handle_message(other, "xyzzy plugh frobnicate");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::SearchResults);
  CHECK(out[0].payload.at("hits").size() <= 10);
  CHECK(desk.o().session(other).phase == Phase::Searching);

  out = desk.o().handle_message(other, "mailbox quota exceeded");
  CHECK(out.back().kind == TurnKind::SearchResults);
  REQUIRE_FALSE(out.back().payload.at("hits").empty());
  CHECK(out.back().payload.at("hits")[0].at("chunk_id") == "c-mail");
}

TEST_CASE("automaton runs only after consent and bound entities") {
  Desk desk(all_units(), {}, support_config());
  const auto id = desk.o().create_session();
  auto out = desk.o().handle_message(id, "How do I reset my password?");
  REQUIRE(out.size() == 2);
  CHECK(out[0].kind == TurnKind::Answer);
  CHECK(out[1].kind == TurnKind::ConsentPrompt);
  CHECK(desk.o().session(id).phase == Phase::AutomatonPending);
  CHECK(desk.adapter.commands().empty());

  out = desk.o().handle_message(id, "what will it do?");
  CHECK(out.at(0).kind == TurnKind::Reprompt);
  CHECK(desk.o().session(id).phase == Phase::AutomatonPending);

  out = desk.o().handle_message(id, "yes");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::FollowUp);
  CHECK(out[0].text == "What is your user id?");
  CHECK(desk.adapter.commands().empty());

  out = desk.o().handle_message(id, "jdoe");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::Execution);
  CHECK(out[0].payload.at("exit_status") == 0);
  CHECK(out[0].payload.at("consent_turn") == 5);
  CHECK(desk.adapter.commands() == std::vector<std::string>{"reset-password --user jdoe"});
  CHECK(desk.o().session(id).phase == Phase::AnswerShown);
}

TEST_CASE("entities in the question skip the follow-up") {
  Desk desk(all_units(), {}, support_config());
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "reset my pasword, my user id is jdoe");
  auto s = desk.o().session(id);
  REQUIRE(s.phase == Phase::AutomatonPending);
  auto out = desk.o().handle_message(id, "ok");
  CHECK(out.at(0).kind == TurnKind::Execution);
  CHECK(desk.adapter.commands() == std::vector<std::string>{"reset-password --user jdoe"});
}

TEST_CASE("declined and failed automatons") {
  Desk desk(all_units(), {}, support_config());
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "How do I reset my password?");
  auto out = desk.o().handle_message(id, "no");
  CHECK(out.at(0).kind == TurnKind::Notice);
  CHECK(desk.o().session(id).phase == Phase::AnswerShown);
  CHECK(desk.adapter.commands().empty());

  desk.adapter.set_exit_status(3);
  const auto other = desk.o().create_session();
  desk.o().handle_message(other, "How do I reset my password?");
  out = desk.o().handle_message(other, "yes, my user id is mk");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::Execution);
  CHECK(out[0].payload.at("exit_status") == 3);
  CHECK(out[0].payload.at("offer_handoff") == true);
  CHECK(desk.o().session(other).phase == Phase::AnswerShown);
}

TEST_CASE("input that does not fit the phase is reprompted") {
  Desk desk(deskqa::testing::card_units());
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "How do I get a card?");
  const auto before = desk.o().session(id);
  auto out = desk.o().handle_message(id, "banana");
  REQUIRE(out.size() == 1);
  CHECK(out[0].kind == TurnKind::Reprompt);
  const auto after = desk.o().session(id);
  CHECK(after.phase == Phase::Disambiguating);
  CHECK(after.transitions == before.transitions);
  CHECK(after.graph == before.graph);

  out = desk.o().handle_message(id, "");
  CHECK(out.at(0).kind == TurnKind::Reprompt);

  out = desk.o().handle_message(id, "neither");
  CHECK(out.at(0).kind == TurnKind::SearchResults);
}

TEST_CASE("hand-off, agent replies and closing") {
  Desk desk(all_units(), {}, support_config());
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "vpn connection drops");
  CHECK(desk.o().handoff(id));
  CHECK_FALSE(desk.o().handoff(id));
  CHECK(desk.queue.entries().size() == 1);
  CHECK(desk.queue.entries()[0].session_id == id);
  const auto history = desk.o().session(id).turns.size();

  auto relayed = desk.o().handle_message(id, "are you there?");
  CHECK(relayed.empty());
  auto t = desk.o().agent_message(id, "alice", "Yes, I am looking at your VPN profile now.");
  CHECK(t.actor == Actor::Agent);
  auto s = desk.o().session(id);
  CHECK(s.turns.size() == history + 2);
  CHECK(s.assigned_agent == "alice");
  CHECK(desk.queue.entries()[0].claimed_by == "alice");

  CHECK(desk.o().close(id));
  CHECK_FALSE(desk.o().close(id));
  CHECK(desk.queue.entries().empty());
  CHECK_THROWS_AS(desk.o().handle_message(id, "hello"), Error);
  try {
    desk.o().handle_message(id, "hello");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FailedPrecondition);
  }
  CHECK_THROWS_AS(desk.o().session("s-999"), Error);
  CHECK_THROWS_AS(desk.o().agent_message(desk.o().create_session(), "alice", "hi"), Error);
}

TEST_CASE("asking for a person hands off") {
  Desk desk(all_units(), {}, support_config());
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "I want to talk to a human");
  CHECK(desk.o().session(id).phase == Phase::HandedOff);
}

TEST_CASE("feedback") {
  Desk desk(all_units(), deskqa::testing::support_chunks(), support_config());
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "lost badge replacement");
  auto s = desk.o().session(id);
  REQUIRE(s.turns.back().kind == TurnKind::SearchResults);
  const std::size_t hit_turn = s.turns.back().index;
  auto ev = desk.o().record_feedback(id, hit_turn, Polarity::Positive);
  CHECK(ev.target == "c-badge");
  auto cands = desk.store.candidates();
  REQUIRE(cands.size() == 1);
  CHECK(cands[0].answer_source == "c-badge");
  CHECK(cands[0].question == s.active_question);
  CHECK(cands[0].weight == 1);

  CHECK_THROWS_AS(desk.o().record_feedback(id, 99, Polarity::Positive), Error);
  CHECK_THROWS_AS(desk.o().record_feedback(id, 0, Polarity::Positive), Error);  // a user turn
  CHECK_THROWS_AS(desk.o().record_feedback(id, hit_turn, Polarity::Positive, std::string("c-zzz")), Error);

  const auto other = desk.o().create_session();
  desk.o().handle_message(other, "How do I add a network printer?");
  desk.o().record_feedback(other, 1, Polarity::Negative);
  CHECK(desk.o().session(other).phase == Phase::HandedOff);
  CHECK(desk.store.feedback().size() == 2);
  CHECK(desk.store.feedback()[1].target == "printer");
}

TEST_CASE("negative feedback without hand-off") {
  auto config = support_config();
  config.handoff_on_negative = false;
  Desk desk(all_units(), {}, config);
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "How do I add a network printer?");
  desk.o().record_feedback(id, 1, Polarity::Negative);
  CHECK(desk.o().session(id).phase == Phase::AnswerShown);
}

TEST_CASE("raising theta_answer never turns a search into an answer") {
  auto high = deskqa::testing::model_config();
  high.theta_answer = 0.8;
  Desk low_desk(deskqa::testing::model_units(), deskqa::testing::support_chunks(), deskqa::testing::model_config());
  Desk high_desk(deskqa::testing::model_units(), deskqa::testing::support_chunks(), high);
  const std::vector<std::string> words = {"card", "credit", "debit", "new",  "duplicate", "password", "reset",
                                          "vpn",  "printer", "account", "open", "close", "savings", "how",
                                          "do",   "i",       "get",     "xyz",  "mail"};
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 300; ++trial) {
    std::string q;
    const int len = 1 + static_cast<int>(rng() % 5);
    for (int w = 0; w < len; ++w) q += words[rng() % words.size()] + " ";
    const auto a = low_desk.o().create_session();
    const auto b = high_desk.o().create_session();
    low_desk.o().handle_message(a, q);
    high_desk.o().handle_message(b, q);
    if (low_desk.o().session(a).phase == Phase::Searching) {
      const auto hp = high_desk.o().session(b).phase;
      CHECK(hp != Phase::AnswerShown);
      CHECK(hp != Phase::AutomatonPending);
    }
  }
}

TEST_CASE("sessions survive a restart through the store") {
  deskqa::testing::Desk desk(deskqa::testing::card_units());
  const auto id = desk.o().create_session();
  desk.o().handle_message(id, "How do I get a card?");
  const auto before = desk.o().session(id);
  Json j = before;
  CHECK(j.get<Session>().turns == before.turns);

  Orchestrator again(desk.store, desk.knowledge, desk.adapter, desk.queue);
  const auto restored = again.session(id);
  CHECK(restored.phase == Phase::Disambiguating);
  CHECK(restored.graph == before.graph);
  CHECK(restored.turns == before.turns);
  again.handle_message(id, "Credit Card");
  again.handle_message(id, "duplicate");
  CHECK(again.session(id).shown_unit == "credit-duplicate");
  CHECK(again.create_session() != id);
}

TEST_CASE("screenshot queries enter the same pipeline") {
  Desk desk(all_units(), {}, support_config());
  const auto id = desk.o().create_session();
  vision::ErrorQuery q;
  q.application = "VPN";
  q.error_text = "Error: client fail to connect";
  desk.o().handle_query(id, q);
  const auto s = desk.o().session(id);
  CHECK(s.turns[0].text == "Error: client fail to connect VPN");
  CHECK(last_system(s).payload.value("unit_id", "") == "vpn");
}

TEST_CASE("agent queue long poll") {
  AgentQueue q;
  const auto v0 = q.version();
  auto [entries, v] = q.wait(v0, std::chrono::milliseconds(20));
  CHECK(entries.empty());
  CHECK(v == v0);

  std::thread producer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    q.enqueue({"s-1", "help", 0, std::nullopt});
  });
  auto [after, v1] = q.wait(v0, std::chrono::seconds(5));
  producer.join();
  CHECK(after.size() == 1);
  CHECK(v1 > v0);
  CHECK_FALSE(q.enqueue({"s-1", "again", 0, std::nullopt}));
  q.remove("s-1");
  CHECK(q.entries().empty());
}

TEST_CASE("command instantiation and the subprocess adapter") {
  AutomatonRef a{"echo", "Echo", "printf %s {user_id}", {"user_id"}};
  CHECK(instantiate_command(a, {{"user_id", "x"}}, false) == "printf %s x");
  CHECK(instantiate_command(a, {{"user_id", "a'b"}}, true) == "printf %s 'a'\\''b'");
  CHECK_THROWS_AS(instantiate_command(a, {}, false), Error);

  SubprocessExecutionAdapter adapter;
  auto r = adapter.run(a, {{"user_id", "it's; rm -rf nothing"}});
  CHECK(r.exit_status == 0);
  CHECK(r.output == "it's; rm -rf nothing");
  AutomatonRef fail{"f", "Fail", "exit {code}", {"code"}};
  CHECK(adapter.run(fail, {{"code", "4"}}).exit_status == 4);
}

TEST_CASE("model test over random sessions") {
  const auto r = deskqa::testing::run_orchestrator_model(1500, 5);
  CHECK(r.sequences == 1500);
  CHECK(r.illegal_transitions == 0);
  CHECK(r.broken_chains == 0);
  CHECK(r.graph_outside_disambiguation == 0);
  CHECK(r.executions_without_consent == 0);
  CHECK(r.clarify_violations == 0);
  CHECK(r.unexpected_errors == 0);
  // The generator reaches every phase and actually runs automatons.
  CHECK(r.phases_seen.size() == 7);
  CHECK(r.executions > 0);
  CHECK(r.max_clarify_run >= 2);
  for (const auto& e : r.error_samples) MESSAGE(e);
  MESSAGE("events=" << r.events << " executions=" << r.executions << " max clarify run=" << r.max_clarify_run);
}
