#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <sstream>
#include <thread>

#include "deskqa/error.hpp"
#include "deskqa/gateway.hpp"
#include "deskqa/text.hpp"
#include "desk_fixture.hpp"
#include "test_util.hpp"

using namespace deskqa;
using namespace deskqa::gateway;
using deskqa::testing::TempDir;

namespace fs = std::filesystem;

namespace {

constexpr Timestamp kStart = 1'700'000'000'000'000;

Request req(std::string method, std::string path, Json body = nullptr) {
  Request r;
  r.method = std::move(method);
  r.path = std::move(path);
  if (!body.is_null()) r.body = body.dump();
  return r;
}

Request get(std::string path) { return req("GET", std::move(path)); }
Request post(std::string path, Json body = nullptr) { return req("POST", std::move(path), std::move(body)); }

void seed_cards(const fs::path& dir) {
  auto store = Store::open(dir, manual_clock(kStart));
  for (const auto& u : deskqa::testing::card_units()) store->upsert_answer_unit(u);
  store->put_chunks(deskqa::testing::support_chunks());
}

ServiceConfig config_for(const fs::path& dir) {
  ServiceConfig c;
  c.data_dir = dir;
  return c;
}

std::unique_ptr<Service> service(const fs::path& dir, ServiceConfig c) {
  c.data_dir = dir;
  return std::make_unique<Service>(std::move(c), manual_clock(kStart));
}

std::unique_ptr<Service> service(const fs::path& dir) { return service(dir, ServiceConfig{}); }

void check_api_error(const Response& r, int status, const std::string& code) {
  CHECK(r.status == status);
  REQUIRE(r.body.is_object());
  CHECK(r.body.at("code") == code);
  CHECK(r.body.at("message").is_string());
  CHECK_FALSE(r.body.at("message").get<std::string>().empty());
  CHECK(r.body.contains("details"));
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Drops wall-clock fields so bodies from separate runs compare equal.
Json without_times(Json j) {
  if (j.is_object()) {
    Json out = Json::object();
    for (auto& [k, v] : j.items()) {
      if (k == "timestamp" || k == "queued_at" || k == "created_at" || k == "decided_at" || k == "at") continue;
      out[k] = without_times(v);
    }
    return out;
  }
  if (j.is_array()) {
    Json out = Json::array();
    for (auto& v : j) out.push_back(without_times(v));
    return out;
  }
  return j;
}

}  // namespace

TEST_CASE("config file parsing") {
  TempDir dir;
  const auto path = dir.path() / "deskqa.conf";
  {
    std::ofstream out(path);
    out << "# desk settings\n\ntheta_answer = 0.6\ntheta_disambig=0.2\nk = 7\ntop_k = 4\nW_promote = 5\n"
           "gap_threshold = 1.25\nsigma1 = 0.8\nsigma2 = 1.6\nagent_token = s3cret\nhandoff_on_negative = no\n"
           "max_wait = 2s\n";
  }
  const auto c = ServiceConfig::load(path);
  CHECK(c.orchestrator.theta_answer == doctest::Approx(0.6));
  CHECK(c.orchestrator.theta_disambig == doctest::Approx(0.2));
  CHECK(c.orchestrator.search_k == 7);
  CHECK(c.orchestrator.top_k == 4);
  CHECK(c.harvest.w_promote == 5);
  CHECK(c.gap_threshold == doctest::Approx(1.25));
  CHECK(c.vision.dog.sigma1 == doctest::Approx(0.8));
  CHECK(c.vision.dog.sigma2 == doctest::Approx(1.6));
  CHECK(c.agent_token == "s3cret");
  CHECK_FALSE(c.orchestrator.handoff_on_negative);
  CHECK(c.max_wait == std::chrono::milliseconds(2000));
  CHECK_NOTHROW(c.validate());

  {
    std::ofstream out(path);
    out << "theta_answer = 0.6\nbogus = 1\n";
  }
  try {
    ServiceConfig::load(path);
    FAIL("unknown key accepted");
  } catch (const Error& e) {
    CHECK(e.details() == "2");
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  {
    std::ofstream out(path);
    out << "top_k = many\n";
  }
  CHECK_THROWS_AS(ServiceConfig::load(path), Error);
  {
    std::ofstream out(path);
    out << "just a line\n";
  }
  CHECK_THROWS_AS(ServiceConfig::load(path), Error);
  CHECK_THROWS_AS(ServiceConfig::load(dir.path() / "missing.conf"), Error);

  ServiceConfig bad;
  bad.set("theta_disambig", "0.9");  // above theta_answer
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("durations") {
  CHECK(parse_duration("30s") == std::chrono::milliseconds(30000));
  CHECK(parse_duration("250ms") == std::chrono::milliseconds(250));
  CHECK(parse_duration("2m") == std::chrono::milliseconds(120000));
  CHECK(parse_duration("5") == std::chrono::milliseconds(5000));
  CHECK(parse_duration("0.5s") == std::chrono::milliseconds(500));
  CHECK_THROWS_AS(parse_duration("soon"), Error);
  CHECK_THROWS_AS(parse_duration("-1s"), Error);
}

TEST_CASE("empty data dir starts healthy with no classes") {
  TempDir dir;
  auto svc = service(dir.path());
  auto h = svc->handle(get("/health"));
  CHECK(h.status == 200);
  CHECK(h.body.at("status") == "ok");
  CHECK(h.body.at("model").at("trained") == false);
  CHECK(h.body.at("model").at("classes") == 0);
  CHECK(h.body.at("index").at("built") == true);
  CHECK(h.body.at("index").at("chunks") == 0);

  auto s = svc->handle(post("/sessions"));
  REQUIRE(s.status == 201);
  const std::string id = s.body.at("id");
  auto m = svc->handle(post("/sessions/" + id + "/messages", {{"text", "How do I reset my password?"}}));
  REQUIRE(m.status == 200);
  CHECK(m.body.at("phase") == "Searching");
  REQUIRE(m.body.at("turns").size() == 1);
  CHECK(m.body.at("turns")[0].at("kind") == "search_results");
  CHECK(m.body.at("turns")[0].at("payload").at("hits") == Json::array());

  check_api_error(svc->handle(post("/train")), 409, "failed_precondition");
}

TEST_CASE("training publishes a model whose snapshot id health reports") {
  TempDir dir;
  seed_cards(dir.path());
  std::uint64_t snap = 0;
  {
    auto svc = service(dir.path());
    snap = svc->store().snapshot()->id;
    auto before = svc->handle(get("/health")).body;
    CHECK(before.at("model").at("trained") == false);
    CHECK(before.at("model").at("needs_retrain") == true);

    auto t = svc->handle(post("/train"));
    REQUIRE(t.status == 200);
    CHECK(t.body.at("classes") == 4);
    CHECK(t.body.at("snapshot_id") == snap);
    auto h = svc->handle(get("/health")).body;
    CHECK(h.at("model").at("trained") == true);
    CHECK(h.at("model").at("snapshot_id") == snap);
    CHECK(h.at("model").at("needs_retrain") == false);
    CHECK(h.at("index").at("chunks") == 3);
  }
  CHECK(fs::exists(dir.path() / "model.json"));
  auto again = service(dir.path());
  auto h = again->handle(get("/health")).body;
  CHECK(h.at("model").at("trained") == true);
  CHECK(h.at("model").at("snapshot_id") == snap);
}

TEST_CASE("banking dialog through the message endpoint") {
  TempDir dir;
  seed_cards(dir.path());
  auto svc = service(dir.path());
  REQUIRE(svc->handle(post("/train")).status == 200);
  const std::string id = svc->handle(post("/sessions")).body.at("id");

  auto r = svc->handle(post("/sessions/" + id + "/messages", {{"text", "How do I get a card?"}}));
  REQUIRE(r.status == 200);
  CHECK(r.body.at("phase") == "Disambiguating");
  CHECK(r.body.at("options") == Json::array({"Debit Card", "Credit Card"}));
  CHECK(r.body.at("turns")[0].at("kind") == "clarify");

  r = svc->handle(post("/sessions/" + id + "/messages", {{"option", "Credit Card"}}));
  REQUIRE(r.status == 200);
  CHECK(r.body.at("phase") == "Disambiguating");
  const auto options = r.body.at("options").get<std::vector<std::string>>();
  std::size_t dup = options.size();
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (options[i].find("uplicate") != std::string::npos) dup = i;
  }
  REQUIRE(dup < options.size());

  r = svc->handle(post("/sessions/" + id + "/messages", {{"option", dup}}));
  REQUIRE(r.status == 200);
  CHECK(r.body.at("phase") == "AnswerShown");
  CHECK_FALSE(r.body.contains("options"));
  CHECK(r.body.at("turns")[0].at("payload").at("unit_id") == "credit-duplicate");

  auto view = svc->handle(get("/sessions/" + id));
  CHECK(view.body.at("phase") == "AnswerShown");
  CHECK(view.body.at("turns").size() == 6);
}

TEST_CASE("error responses carry an ApiError body") {
  TempDir dir;
  seed_cards(dir.path());
  auto svc = service(dir.path());
  svc->handle(post("/train"));
  const std::string id = svc->handle(post("/sessions")).body.at("id");

  check_api_error(svc->handle(post("/sessions/s-999/messages", {{"text", "hi"}})), 404, "not_found");
  check_api_error(svc->handle(get("/sessions/s-999")), 404, "not_found");
  check_api_error(svc->handle(get("/nowhere")), 404, "not_found");
  check_api_error(svc->handle(get("/train")), 405, "method_not_allowed");
  check_api_error(svc->handle(req("DELETE", "/sessions/" + id)), 405, "method_not_allowed");

  Request broken = post("/sessions/" + id + "/messages");
  broken.body = "{\"text\": ";
  check_api_error(svc->handle(broken), 400, "parse_error");
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", Json::object())), 400, "invalid_argument");
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"text", "a"}, {"option", 0}})), 400,
                  "invalid_argument");
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"text", 5}})), 400, "invalid_argument");
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"option", "Credit Card"}})), 409,
                  "failed_precondition");

  svc->handle(post("/sessions/" + id + "/messages", {{"text", "How do I get a card?"}}));
  auto wrong = svc->handle(post("/sessions/" + id + "/messages", {{"option", "Gold Card"}}));
  check_api_error(wrong, 400, "invalid_argument");
  CHECK(wrong.body.at("details").at("options") == Json::array({"Debit Card", "Credit Card"}));
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"option", 7}})), 400, "invalid_argument");

  check_api_error(svc->handle(post("/sessions/" + id + "/feedback", {{"turn", 1}})), 400, "invalid_argument");
  check_api_error(svc->handle(post("/sessions/" + id + "/feedback", {{"turn", 77}, {"polarity", "positive"}})), 404,
                  "not_found");
  check_api_error(svc->handle(post("/agent/sessions/" + id + "/messages", {{"text", "hello"}})), 409,
                  "failed_precondition");

  auto closed = svc->handle(post("/sessions/" + id + "/close"));
  CHECK(closed.status == 200);
  CHECK(closed.body.at("closed") == true);
  CHECK(svc->handle(post("/sessions/" + id + "/close")).body.at("closed") == false);
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"text", "hello again"}})), 409,
                  "failed_precondition");
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"option", 0}})), 409, "failed_precondition");
}

TEST_CASE("idempotency keys make retries safe") {
  TempDir dir;
  seed_cards(dir.path());
  auto svc = service(dir.path());
  svc->handle(post("/train"));

  Request create = post("/sessions");
  create.headers["idempotency-key"] = "k1";
  const auto a = svc->handle(create);
  const auto b = svc->handle(create);
  CHECK(a.status == 201);
  CHECK(a.body == b.body);
  CHECK(svc->orchestrator().session_ids().size() == 1);
  const std::string id = a.body.at("id");

  Request msg = post("/sessions/" + id + "/messages", {{"text", "How do I get a card?"}});
  msg.headers["idempotency-key"] = "m1";
  const auto first = svc->handle(msg);
  const auto retry = svc->handle(msg);
  CHECK(first.body == retry.body);
  CHECK(svc->orchestrator().session(id).turns.size() == 2);

  Request other = post("/sessions/" + id + "/messages", {{"text", "something else"}});
  other.headers["idempotency-key"] = "m1";
  check_api_error(svc->handle(other), 409, "conflict");

  // Failures are replayed too, so a retried bad request stays bad.
  Request bad = post("/sessions/s-404/messages", {{"text", "x"}});
  bad.headers["idempotency-key"] = "m2";
  check_api_error(svc->handle(bad), 404, "not_found");
  check_api_error(svc->handle(bad), 404, "not_found");

  // Without a key the same request runs twice.
  Request plain = post("/sessions");
  svc->handle(plain);
  svc->handle(plain);
  CHECK(svc->orchestrator().session_ids().size() == 3);

  // Hand-off and close are idempotent on their own.
  CHECK(svc->handle(post("/sessions/" + id + "/handoff")).body.at("handed_off") == true);
  CHECK(svc->handle(post("/sessions/" + id + "/handoff")).body.at("handed_off") == false);
  CHECK(svc->queue().entries().size() == 1);
}

TEST_CASE("agent token guards agent, review and admin endpoints") {
  TempDir dir;
  ServiceConfig c;
  c.agent_token = "t0ken";
  auto svc = service(dir.path(), c);
  for (const auto& r : {get("/agent/queue"), get("/review/candidates"), post("/train"),
                        post("/ingest/documents", {{"source_id", "d"}, {"content", "<h1>A</h1><p>b</p>"}}),
                        post("/review/x", {{"decision", "reject"}})}) {
    check_api_error(svc->handle(r), 401, "unauthenticated");
  }
  Request with = get("/agent/queue");
  with.headers["x-agent-token"] = "t0ken";
  CHECK(svc->handle(with).status == 200);
  Request bearer = get("/review/candidates");
  bearer.headers["authorization"] = "Bearer t0ken";
  CHECK(svc->handle(bearer).status == 200);
  Request wrong = get("/agent/queue");
  wrong.headers["x-agent-token"] = "guess";
  check_api_error(svc->handle(wrong), 401, "unauthenticated");
  // User-facing endpoints stay open.
  CHECK(svc->handle(post("/sessions")).status == 201);
  CHECK(svc->handle(get("/health")).status == 200);
}

TEST_CASE("hand-off, long poll, agent reply and harvest review") {
  TempDir dir;
  seed_cards(dir.path());
  auto svc = service(dir.path());
  svc->handle(post("/train"));
  const std::string id = svc->handle(post("/sessions")).body.at("id");
  svc->handle(post("/sessions/" + id + "/messages", {{"text", "My laptop will not join the wireless network"}}));

  auto q0 = svc->handle(get("/agent/queue"));
  CHECK(q0.body.at("entries").empty());
  const std::uint64_t v0 = q0.body.at("version");

  std::thread later([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    svc->handle(post("/sessions/" + id + "/handoff"));
  });
  Request poll = get("/agent/queue");
  poll.query["wait"] = "5s";
  poll.query["since"] = std::to_string(v0);
  const auto t0 = std::chrono::steady_clock::now();
  auto q1 = svc->handle(poll);
  later.join();
  CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(4));
  REQUIRE(q1.body.at("entries").size() == 1);
  CHECK(q1.body.at("entries")[0].at("session_id") == id);
  CHECK(q1.body.at("version").get<std::uint64_t>() > v0);

  Request idle = get("/agent/queue");
  idle.query["wait"] = "100ms";
  idle.query["since"] = std::to_string(q1.body.at("version").get<std::uint64_t>());
  auto q2 = svc->handle(idle);
  CHECK(q2.body.at("version") == q1.body.at("version"));
  Request bad_since = get("/agent/queue");
  bad_since.query["since"] = "x";
  check_api_error(svc->handle(bad_since), 400, "invalid_argument");

  const std::string reply = "Open network settings, forget the corporate profile and join again with your badge.";
  auto a = svc->handle(post("/agent/sessions/" + id + "/messages", {{"agent", "alice"}, {"text", reply}}));
  REQUIRE(a.status == 200);
  CHECK(a.body.at("turn").at("actor") == "agent");
  auto u = svc->handle(post("/sessions/" + id + "/messages", {{"text", "thanks, that works"}}));
  CHECK(u.body.at("phase") == "HandedOff");
  CHECK(u.body.at("turns").empty());
  CHECK(svc->handle(get("/agent/sessions/" + id)).body.at("assigned_agent") == "alice");

  CHECK(svc->handle(post("/agent/sessions/" + id + "/close")).status == 200);
  CHECK(svc->queue().entries().empty());
  auto cands = svc->handle(get("/review/candidates")).body.at("candidates");
  REQUIRE(cands.size() == 1);
  const std::string cid = cands[0].at("id");
  CHECK(cands[0].at("answer_text") == reply);

  const auto units_before = svc->store().snapshot()->units.size();
  check_api_error(svc->handle(post("/review/" + cid, {{"decision", "maybe"}})), 400, "invalid_argument");
  check_api_error(svc->handle(post("/review/nope", {{"decision", "approve"}})), 404, "not_found");
  auto ok = svc->handle(post("/review/" + cid, {{"decision", "approve"}, {"reviewer", "bob"}}));
  REQUIRE(ok.status == 200);
  CHECK(ok.body.at("unit_id") == "H-" + cid);
  CHECK(ok.body.at("needs_retrain") == true);
  CHECK(svc->store().snapshot()->units.size() == units_before + 1);
  check_api_error(svc->handle(post("/review/" + cid, {{"decision", "approve"}})), 409, "conflict");

  svc->handle(post("/train"));
  CHECK(svc->handle(get("/health")).body.at("model").at("needs_retrain") == false);

  auto exported = svc->handle(get("/review/export"));
  REQUIRE(exported.raw);
  CHECK(exported.content_type == "application/x-ndjson");
  CHECK(Json::parse(split_lines(*exported.raw).at(0)).at("id") == cid);
}

TEST_CASE("search feedback over the API fills the review queue") {
  TempDir dir;
  seed_cards(dir.path());
  ServiceConfig c;
  c.orchestrator.handoff_on_negative = false;
  auto svc = service(dir.path(), c);
  svc->handle(post("/train"));
  std::string search_session;
  for (int i = 0; i < 3; ++i) {
    const std::string id = svc->handle(post("/sessions")).body.at("id");
    auto r = svc->handle(post("/sessions/" + id + "/messages", {{"text", "guest wireless voucher"}}));
    REQUIRE(r.body.at("phase") == "Searching");
    const auto turn = r.body.at("turns")[0];
    REQUIRE(turn.at("kind") == "search_results");
    auto f = svc->handle(post("/sessions/" + id + "/feedback", {{"turn", turn.at("index")}, {"polarity", "positive"}}));
    REQUIRE(f.status == 200);
    CHECK(f.body.at("event").at("target") == "c-wifi");
    search_session = id;
  }
  Request ready = get("/review/candidates");
  ready.query["ready"] = "true";
  auto cands = svc->handle(ready).body.at("candidates");
  REQUIRE(cands.size() == 1);
  CHECK(cands[0].at("weight") == 3);
  CHECK(cands[0].at("answer_source") == "c-wifi");

  auto rej = svc->handle(post("/review/" + cands[0].at("id").get<std::string>(), {{"decision", "reject"}}));
  CHECK(rej.body.at("unit_id").is_null());
  CHECK(svc->handle(ready).body.at("candidates").empty());
}

TEST_CASE("ingestion endpoints") {
  TempDir dir;
  auto svc = service(dir.path());

  auto d = svc->handle(post("/ingest/documents",
                            {{"source_id", "guide"},
                             {"format", "markdown"},
                             {"content", "# Mail\n\n## Quota\n\nArchive old mail when the mailbox quota is full.\n"}}));
  REQUIRE(d.status == 201);
  REQUIRE(d.body.at("chunks").size() == 1);
  const std::string chunk = d.body.at("chunks")[0];
  CHECK(svc->store().chunk(chunk)->heading_path == std::vector<std::string>{"Mail", "Quota"});
  CHECK(svc->handle(get("/health")).body.at("index").at("chunks") == 1);

  const std::string id = svc->handle(post("/sessions")).body.at("id");
  auto s = svc->handle(post("/sessions/" + id + "/messages", {{"text", "mailbox quota full"}}));
  REQUIRE(s.body.at("turns")[0].at("payload").at("hits").size() == 1);
  CHECK(s.body.at("turns")[0].at("payload").at("hits")[0].at("chunk_id") == chunk);

  check_api_error(svc->handle(post("/ingest/documents", {{"source_id", "x"}, {"format", "pdf"}, {"content", "a"}})),
                  400, "invalid_argument");
  check_api_error(svc->handle(post("/ingest/documents", {{"source_id", "x"}, {"format", "markdown"},
                                                         {"content", "# A\n\n```\nopen fence\n"}})),
                  400, "parse_error");

  Json words = Json::array();
  double t = 0;
  for (const char* w : {"restart", "the", "router.", "then", "wait", "a", "minute"}) {
    words.push_back({{"word", w}, {"start", t}, {"end", t + 0.3}});
    t += 0.4;
  }
  auto tr = svc->handle(post("/ingest/transcripts", {{"source_id", "call-1"}, {"words", words}}));
  REQUIRE(tr.status == 201);
  for (const auto& cid : tr.body.at("chunks")) CHECK(svc->store().chunk(cid.get<std::string>())->time_anchor);
  auto trj = svc->handle(post("/ingest/transcripts",
                              {{"source_id", "call-2"},
                               {"jsonl", "{\"word\":\"hello\",\"start\":0,\"end\":0.2}\n"
                                         "{\"word\":\"there.\",\"start\":0.3,\"end\":0.5}\n"}}));
  CHECK(trj.status == 201);
  Json bad_words = Json::array({{{"word", "a"}, {"start", 2.0}, {"end", 1.0}}});
  check_api_error(svc->handle(post("/ingest/transcripts", {{"source_id", "c"}, {"words", bad_words}})), 400,
                  "invalid_argument");

  const std::string csv =
      "id,problem,resolution\n"
      "1,Outlook cannot connect to the exchange server,Repair the mail profile\n"
      "2,Outlook cannot connect to exchange server,Repair the profile\n"
      "3,Printer shows paper jam error,\n";
  auto inc = svc->handle(post("/ingest/incidents", {{"csv", csv}}));
  REQUIRE(inc.status == 201);
  CHECK(inc.body.at("clusters").size() == 2);
  REQUIRE(inc.body.at("units").size() == 1);
  CHECK(inc.body.at("needs_manual_curation") == Json::array({"3"}));
  const auto unit = svc->store().answer_unit(inc.body.at("units")[0].get<std::string>());
  REQUIRE(unit);
  CHECK(unit->source == UnitSource::Mined);
  CHECK(unit->alternate_questions.size() == 1);

  // Re-mining the same incidents upserts the same unit ids.
  auto again = svc->handle(post("/ingest/incidents", {{"csv", csv}}));
  CHECK(again.body.at("units") == inc.body.at("units"));
  CHECK(again.body.at("conflicts").empty());
}

TEST_CASE("image upload and screenshot turns") {
  TempDir dir;
  seed_cards(dir.path());
  const std::string png = file_bytes(DESKQA_FIXTURES "/screenshot.png");

  {
    auto svc = service(dir.path());
    Request up = post("/images");
    up.upload = Upload{"shot.png", "image/png", png};
    auto r = svc->handle(up);
    REQUIRE(r.status == 201);
    const std::string img = r.body.at("id");
    CHECK(r.body.at("width").get<int>() > 0);
    Request raw = post("/images");
    raw.body = png;
    CHECK(svc->handle(raw).body.at("id") == img);

    Request junk = post("/images");
    junk.body = "not an image at all";
    CHECK(svc->handle(junk).status == 400);
    check_api_error(svc->handle(post("/images")), 400, "invalid_argument");

    const std::string id = svc->handle(post("/sessions")).body.at("id");
    check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"image", img}})), 503, "unavailable");
  }

  const auto ocr_dir = dir.path() / "ocr";
  fs::create_directories(ocr_dir);
  {
    std::ofstream out(ocr_dir / "default.jsonl");
    out << R"({"text": "Card Services"})" << "\n"
        << R"({"text": "Error: duplicate credit card request failed"})" << "\n";
  }
  ServiceConfig c;
  c.ocr_fixtures = ocr_dir;
  auto svc = service(dir.path(), c);
  svc->handle(post("/train"));
  Request up = post("/images");
  up.upload = Upload{"shot.png", "image/png", png};
  const std::string img = svc->handle(up).body.at("id");
  const std::string id = svc->handle(post("/sessions")).body.at("id");
  auto r = svc->handle(post("/sessions/" + id + "/messages", {{"image", img}}));
  REQUIRE(r.status == 200);
  CHECK(r.body.at("query").at("error_text") == "Error: duplicate credit card request failed");
  CHECK(r.body.contains("phase"));
  REQUIRE_FALSE(r.body.at("turns").empty());
  CHECK(svc->orchestrator().session(id).turns[0].text == "Error: duplicate credit card request failed");

  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"image", "img-0000000000000000"}})), 404,
                  "not_found");
  check_api_error(svc->handle(post("/sessions/" + id + "/messages", {{"image", "../log.jsonl"}})), 400,
                  "invalid_argument");
  check_api_error(svc->handle(post("/sessions/s-77/messages", {{"image", img}})), 404, "not_found");
}

TEST_CASE("a corrupt log refuses to start and names the line") {
  TempDir dir;
  seed_cards(dir.path());
  {
    std::ofstream out(dir.path() / "log.jsonl", std::ios::app);
    out << "{\"op\": \"put_chunk\", \"ts\": \n";
  }
  try {
    Service svc(config_for(dir.path()), manual_clock(kStart));
    FAIL("service started on a corrupt log");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(e.details() == "6");
    CHECK(std::string(e.what()).find("line 6") != std::string::npos);
  }
}

TEST_CASE("sessions and the hand-off inbox survive a restart") {
  TempDir dir;
  seed_cards(dir.path());
  std::string open_id, handed_id;
  {
    auto svc = service(dir.path());
    svc->handle(post("/train"));
    open_id = svc->handle(post("/sessions")).body.at("id");
    svc->handle(post("/sessions/" + open_id + "/messages", {{"text", "How do I get a card?"}}));
    handed_id = svc->handle(post("/sessions")).body.at("id");
    svc->handle(post("/sessions/" + handed_id + "/handoff"));
  }
  auto svc = service(dir.path());
  auto view = svc->handle(get("/sessions/" + open_id));
  CHECK(view.body.at("phase") == "Disambiguating");
  CHECK(view.body.at("options") == Json::array({"Debit Card", "Credit Card"}));
  auto q = svc->handle(get("/agent/queue")).body.at("entries");
  REQUIRE(q.size() == 1);
  CHECK(q[0].at("session_id") == handed_id);
  const std::string fresh = svc->handle(post("/sessions")).body.at("id");
  CHECK(fresh != open_id);
  CHECK(fresh != handed_id);
}

TEST_CASE("responses are a function of store state and requests") {
  TempDir seed;
  seed_cards(seed.path());
  std::vector<Request> script = {post("/train"), post("/sessions"), post("/sessions")};
  script.push_back(post("/sessions/s-1/messages", {{"text", "How do I get a card?"}}));
  script.push_back(post("/sessions/s-1/messages", {{"option", "Debit Card"}}));
  script.push_back(post("/sessions/s-2/messages", {{"text", "guest wireless voucher"}}));
  script.push_back(post("/sessions/s-2/feedback", {{"turn", 1}, {"polarity", "positive"}}));
  script.push_back(post("/sessions/s-2/handoff"));
  script.push_back(post("/agent/sessions/s-2/messages", {{"text", "Ask reception for a guest voucher, it is valid one day."}}));
  script.push_back(post("/sessions/s-2/close"));
  script.push_back(get("/review/candidates"));
  script.push_back(get("/health"));

  std::vector<std::vector<Json>> runs;
  for (int run = 0; run < 2; ++run) {
    TempDir copy;
    fs::copy(seed.path(), copy.path(), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    auto svc = service(copy.path());
    std::vector<Json> bodies;
    for (const auto& r : script) {
      auto res = svc->handle(r);
      CHECK_MESSAGE(res.status < 400, r.path << " -> " << res.body.dump());
      bodies.push_back(without_times(res.body));
    }
    runs.push_back(std::move(bodies));
  }
  REQUIRE(runs[0].size() == runs[1].size());
  for (std::size_t i = 0; i < runs[0].size(); ++i) CHECK(runs[0][i] == runs[1][i]);
}

TEST_CASE("http front end") {
  TempDir dir;
  seed_cards(dir.path());
  auto svc = service(dir.path());
  svc->handle(post("/train"));
  HttpServer server(*svc, "127.0.0.1", 0);
  const int port = server.port();
  REQUIRE(port > 0);
  std::thread runner([&] { server.run(); });

  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(std::chrono::seconds(2));
  httplib::Result health;
  for (int i = 0; i < 100 && !health; ++i) {
    health = cli.Get("/health");
    if (!health) std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(Json::parse(health->body).at("model").at("trained") == true);

  auto created = cli.Post("/sessions", "", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = Json::parse(created->body).at("id");
  auto msg = cli.Post("/sessions/" + id + "/messages", Json{{"text", "How do I get a card?"}}.dump(),
                      "application/json");
  REQUIRE(msg);
  CHECK(Json::parse(msg->body).at("phase") == "Disambiguating");

  auto missing = cli.Get("/sessions/s-404");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(Json::parse(missing->body).at("code") == "not_found");

  httplib::MultipartFormDataItems items = {
      {"file", file_bytes(DESKQA_FIXTURES "/screenshot.png"), "shot.png", "image/png"}};
  auto up = cli.Post("/images", items);
  REQUIRE(up);
  CHECK(up->status == 201);
  CHECK(Json::parse(up->body).at("id").get<std::string>().rfind("img-", 0) == 0);

  CHECK_THROWS_AS(HttpServer(*svc, "127.0.0.1", port), Error);

  server.stop();
  runner.join();
}
