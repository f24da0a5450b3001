#include <doctest.h>

#include <fstream>

#include "deskqa/error.hpp"
#include "deskqa/store.hpp"
#include "store_ops.hpp"
#include "test_util.hpp"

using namespace deskqa;
using deskqa::testing::TempDir;

namespace {

AnswerUnit unit(const std::string& id, const std::string& question, const std::string& answer = "<p>Use the portal.</p>") {
  AnswerUnit u;
  u.id = id;
  u.primary_question = question;
  u.answer = answer;
  return u;
}

}  // namespace

TEST_CASE("upsert and read back an answer unit") {
  Store store(manual_clock(1000));
  CHECK(store.upsert_answer_unit(unit("U1", "How do I reset my password?")) == "U1");
  auto got = store.answer_unit("U1");
  REQUIRE(got);
  CHECK(got->primary_question == "How do I reset my password?");
  CHECK(got->version == 1);
  CHECK(got->created_at == got->updated_at);
}

TEST_CASE("duplicate primary question across ids is rejected with the conflicting id") {
  Store store;
  store.upsert_answer_unit(unit("U1", "How do I reset my password?"));
  try {
    store.upsert_answer_unit(unit("U2", "how do i RESET my password?"));
    FAIL("expected conflict");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Conflict);
    CHECK(e.details() == "U1");
  }
  CHECK_FALSE(store.answer_unit("U2"));
}

TEST_CASE("updating bumps version and updated_at") {
  Store store;
  store.upsert_answer_unit(unit("U1", "How do I reset my password?"));
  store.upsert_answer_unit(unit("U1", "How do I reset my password?", "<p>Call the desk.</p>"));
  auto got = store.answer_unit("U1");
  REQUIRE(got);
  CHECK(got->version == 2);
  CHECK(got->updated_at > got->created_at);
  CHECK(got->answer == "<p>Call the desk.</p>");
}

TEST_CASE("invariants are enforced") {
  Store store;
  CHECK_THROWS_AS(store.upsert_answer_unit(unit("U1", "  ")), Error);
  CHECK_THROWS_AS(store.upsert_answer_unit(unit("U1", "Q?", "<p> </p>")), Error);
  auto u = unit("U1", "Q?");
  u.alternate_questions = {"q?"};
  CHECK_THROWS_AS(store.upsert_answer_unit(u), Error);
  auto a = unit("U2", "Reset?");
  a.automaton = AutomatonRef{"A1", "Reset", "reset --user {user_id} --host {host}", {"user_id"}};
  CHECK_THROWS_AS(store.upsert_answer_unit(a), Error);
  Chunk c;
  c.id = "C1";
  c.body = "text";
  c.time_anchor = TimeAnchor{5, 5};
  CHECK_THROWS_AS(store.put_chunk(c), Error);
}

TEST_CASE("answer HTML is sanitized on write") {
  Store store;
  store.upsert_answer_unit(unit("U1", "Q?", "<div><p>ok</p><script>x()</script></div>"));
  CHECK(store.answer_unit("U1")->answer == "<p>ok</p>");
}

TEST_CASE("alternate questions are idempotent") {
  Store store;
  store.upsert_answer_unit(unit("U1", "How do I reset my password?"));
  store.add_alternate_question("U1", "password reset steps?");
  auto after = store.add_alternate_question("U1", "Password Reset Steps?");
  CHECK(after.alternate_questions == std::vector<std::string>{"password reset steps?"});
  CHECK_THROWS_AS(store.add_alternate_question("U999", "x?"), Error);
  try {
    store.add_alternate_question("U999", "x?");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotFound);
  }
}

TEST_CASE("snapshots are isolated from later writes") {
  Store store;
  store.upsert_answer_unit(unit("U1", "A?"));
  store.upsert_answer_unit(unit("U2", "B?"));
  auto before = store.snapshot();
  auto again = store.snapshot();
  CHECK(before->id == again->id);
  store.upsert_answer_unit(unit("U3", "C?"));
  auto after = store.snapshot();
  CHECK(before->units.count("U3") == 0);
  CHECK(after->units.count("U3") == 1);
  CHECK(after->id >= before->id);
}

TEST_CASE("feedback requires an existing target") {
  Store store;
  store.upsert_answer_unit(unit("U1", "A?"));
  FeedbackEvent f{"s1", 0, "U1", Polarity::Positive, 0};
  CHECK(store.record_feedback(f).timestamp > 0);
  f.target = "nope";
  CHECK_THROWS_AS(store.record_feedback(f), Error);
  CHECK(store.feedback().size() == 1);
}

TEST_CASE("log replay reproduces live state") {
  TempDir dir;
  std::mt19937_64 rng(7);
  StoreState live;
  {
    auto store = Store::open(dir.path());
    for (int i = 0; i < 600; ++i) deskqa::testing::random_store_op(*store, rng);
    live = store->state();
  }
  auto replayed = Store::open(dir.path());
  CHECK(replayed->state() == live);
}

TEST_CASE("compaction plus tail replay reproduces live state") {
  TempDir dir;
  std::mt19937_64 rng(11);
  StoreState live;
  std::uint64_t snap_id = 0;
  {
    auto store = Store::open(dir.path());
    for (int i = 0; i < 200; ++i) deskqa::testing::random_store_op(*store, rng);
    auto path = store->compact();
    snap_id = store->snapshot()->id;
    CHECK(std::filesystem::exists(path));
    for (int i = 0; i < 200; ++i) deskqa::testing::random_store_op(*store, rng);
    live = store->state();
  }
  auto replayed = Store::open(dir.path());
  CHECK(replayed->state() == live);

  char name[32];
  std::snprintf(name, sizeof name, "%04llu.json", static_cast<unsigned long long>(snap_id));
  auto frozen = Store::load_snapshot_file(dir.path() / "snapshots" / name);
  CHECK(frozen->id == snap_id);
}

TEST_CASE("corrupt log refuses to open and names the line") {
  TempDir dir;
  {
    auto store = Store::open(dir.path());
    store->upsert_answer_unit(unit("U1", "A?"));
    store->upsert_answer_unit(unit("U2", "B?"));
  }
  {
    std::ofstream out(dir.path() / "log.jsonl", std::ios::app);
    out << "{not json\n";
  }
  try {
    Store::open(dir.path());
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(e.details() == "3");
  }
}

TEST_CASE("log records carry op, RFC3339 timestamp and data") {
  TempDir dir;
  {
    auto store = Store::open(dir.path());
    store->upsert_answer_unit(unit("U1", "A?"));
  }
  std::ifstream in(dir.path() / "log.jsonl");
  std::string line;
  REQUIRE(std::getline(in, line));
  auto rec = Json::parse(line);
  CHECK(rec["op"] == "upsert_unit");
  CHECK(rec["ts"].get<std::string>().back() == 'Z');
  CHECK(rec["data"]["id"] == "U1");
}
