#include <doctest.h>

#include <cmath>

#include "deskqa/error.hpp"
#include "deskqa/ingest.hpp"
#include "deskqa/retrieval.hpp"
#include "deskqa/text.hpp"

using namespace deskqa;
using namespace deskqa::ingest;

namespace {

std::string words_paragraph(int first, int n) {
  std::string s = "<p>";
  for (int i = 0; i < n; ++i) s += (i ? " w" : "w") + std::to_string(first + i);
  return s + "</p>";
}

std::vector<TimedWord> uniform_words(int n, double step, double dur) {
  std::vector<TimedWord> words;
  for (int i = 0; i < n; ++i) words.push_back({"word" + std::to_string(i), i * step, i * step + dur});
  return words;
}

}  // namespace

TEST_CASE("nested sections give one chunk per section with body") {
  auto doc = parse_html("<h1>Cards</h1><h2>Credit</h2><p>Body A</p><h2>Debit</h2><p>Body B</p>");
  auto chunks = chunk_document(doc, "doc");
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].heading_path == std::vector<std::string>{"Cards", "Credit"});
  CHECK(chunks[1].heading_path == std::vector<std::string>{"Cards", "Debit"});
  CHECK(chunks[0].body == "<p>Body A</p>");
  CHECK(chunks[0].id == "doc#0000");
  CHECK(chunks[1].token_count == 2);
}

TEST_CASE("empty document gives no chunks") {
  CHECK(chunk_document(parse_html(""), "doc").empty());
  CHECK(chunk_document(parse_markdown(""), "doc").empty());
}

TEST_CASE("oversized section splits at paragraph boundaries") {
  // 12 paragraphs of 100 tokens = 1200 tokens; 5 fit per part under 512.
  StructuredDoc doc;
  doc.blocks.push_back(Block::heading(1, "Guide"));
  std::vector<std::string> paragraphs;
  for (int p = 0; p < 12; ++p) {
    paragraphs.push_back(words_paragraph(p * 100, 100));
    doc.blocks.push_back(Block::body(paragraphs.back()));
  }
  auto chunks = chunk_document(doc, "guide", 512);
  // Oracle: ceil(1200 / (5 * 100)) parts with 500, 500, 200 tokens.
  REQUIRE(chunks.size() == 3);
  CHECK(chunks[0].token_count == 500);
  CHECK(chunks[1].token_count == 500);
  CHECK(chunks[2].token_count == 200);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(chunks[k].heading_path ==
          std::vector<std::string>{"Guide", "(part " + std::to_string(k + 1) + ")"});
  }
  std::vector<std::string> bodies;
  for (const auto& c : chunks) bodies.push_back(c.body);
  CHECK(join(bodies, "\n") == join(paragraphs, "\n"));
}

TEST_CASE("a single paragraph over the limit splits at words") {
  StructuredDoc doc;
  doc.blocks.push_back(Block::body(words_paragraph(0, 1200)));
  auto chunks = chunk_document(doc, "flat", 512);
  REQUIRE(chunks.size() == 3);
  std::vector<std::string> all;
  for (const auto& c : chunks) {
    CHECK(c.token_count <= 512);
    for (auto& t : tokenize(strip_tags(c.body))) all.push_back(t);
  }
  CHECK(all == tokenize(strip_tags(words_paragraph(0, 1200))));
}

TEST_CASE("chunk bodies reconstruct the document text and respect the limit") {
  std::string md = "# Intro\nSome words here.\n\nMore words follow.\n\n## Steps\n- open the portal\n- click reset\n\n"
                   "| fee | amount |\n|---|---|\n| annual | 10 |\n\n## Notes\n";
  for (int i = 0; i < 300; ++i) md += "note" + std::to_string(i) + " ";
  md += "\n";
  auto doc = parse_markdown(md);
  for (std::size_t limit : {8u, 50u, 512u}) {
    auto chunks = chunk_document(doc, "md", limit);
    std::vector<std::string> from_chunks;
    for (const auto& c : chunks) {
      CHECK(c.token_count <= limit);
      CHECK(c.token_count == tokenize(strip_tags(c.body)).size());
      for (auto& t : tokenize(strip_tags(c.body))) from_chunks.push_back(t);
    }
    std::vector<std::string> from_doc;
    for (const auto& b : doc.blocks) {
      if (b.kind == Block::Kind::Body) {
        for (auto& t : tokenize(b.text)) from_doc.push_back(t);
      }
    }
    CHECK(from_chunks == from_doc);
  }
}

TEST_CASE("html parsing keeps tables and images, drops scripts") {
  auto doc = parse_html(
      "<html><head><title>x</title></head><body><h1>Fees</h1><div><p>See <b>table</b>.</p>"
      "<table><tr><td>annual</td><td>10</td></tr></table><img src=\"a.png\"><script>bad()</script></div></body></html>");
  REQUIRE(doc.blocks.size() == 4);
  CHECK(doc.blocks[0].kind == Block::Kind::Heading);
  CHECK(doc.blocks[1].html == "<p>See <b>table</b>.</p>");
  CHECK(doc.blocks[2].html == "<table><tr><td>annual</td><td>10</td></tr></table>");
  CHECK(doc.blocks[3].html == "<img src=\"a.png\">");
}

TEST_CASE("unparseable html names the byte offset") {
  try {
    parse_html("<h1>Title</h1><p>ok</p><p class=\"x\"");
    FAIL("expected a parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ParseError);
    CHECK(e.details() == "23");
  }
  CHECK_THROWS_AS(parse_html("<h2>never closed"), Error);
  CHECK_THROWS_AS(parse_markdown("text\n```\ncode"), Error);
}

TEST_CASE("markdown inline markup becomes the rich-text subset") {
  auto doc = parse_markdown("Use **bold** and *it* with `code`.\n");
  REQUIRE(doc.blocks.size() == 1);
  CHECK(doc.blocks[0].html == "<p>Use <b>bold</b> and <i>it</i> with <code>code</code>.</p>");
}

TEST_CASE("structure induction") {
  SUBCASE("all caps heading") {
    auto doc = induce_structure("INSTALLATION\nstep text follows here.");
    REQUIRE(doc.blocks.size() == 2);
    CHECK(doc.blocks[0].kind == Block::Kind::Heading);
    CHECK(doc.blocks[0].text == "INSTALLATION");
    auto chunks = chunk_document(doc, "t");
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].heading_path == std::vector<std::string>{"INSTALLATION"});
  }
  SUBCASE("no heading-like lines") {
    auto doc = induce_structure("this is plain text.\nit continues on a second line.\n\nand a new paragraph.");
    auto chunks = chunk_document(doc, "t");
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].heading_path.empty());
  }
  SUBCASE("numbered headings") {
    auto doc = induce_structure("1. Intro\nwelcome to the guide.\n2. Setup\ninstall the client.\n2.1 Windows\nrun setup.exe.");
    auto chunks = chunk_document(doc, "t");
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].heading_path == std::vector<std::string>{"1. Intro"});
    CHECK(chunks[1].heading_path == std::vector<std::string>{"2. Setup"});
    CHECK(chunks[2].heading_path == std::vector<std::string>{"2. Setup", "2.1 Windows"});
  }
  SUBCASE("title case line nests under all caps") {
    auto doc = induce_structure("ACCOUNTS\nWindows Login Issues\nreset it from the portal.");
    auto chunks = chunk_document(doc, "t");
    REQUIRE(chunks.size() == 1);
    CHECK(chunks[0].heading_path == std::vector<std::string>{"ACCOUNTS", "Windows Login Issues"});
  }
}

TEST_CASE("transcript pause splits sentences and chunks") {
  // 10 words, 0.1 s gaps except 1.2 s after word 4 (index 4).
  std::vector<TimedWord> words;
  double t = 0;
  for (int i = 0; i < 10; ++i) {
    words.push_back({"w" + std::to_string(i), t, t + 0.3});
    t += 0.4;
    if (i == 4) t += 1.1;  // gap = 0.1 + 1.1 = 1.2 s
  }
  auto sentences = transcript_sentences(words, 0.8);
  REQUIRE(sentences.size() == 2);
  CHECK(sentences[0] == std::make_pair<std::size_t, std::size_t>(0, 4));
  auto chunks = segment_transcript(words, "vid", 0.8);
  REQUIRE(chunks.size() == 2);
  CHECK(chunks[0].time_anchor->start_seconds == words[0].start);
  CHECK(chunks[0].time_anchor->end_seconds == words[4].end);
  CHECK(chunks[1].time_anchor->start_seconds == words[5].start);
  CHECK(chunks[1].time_anchor->end_seconds == words[9].end);
}

TEST_CASE("transcript edge cases") {
  CHECK(segment_transcript({}, "vid").empty());
  auto uniform = uniform_words(20, 0.4, 0.3);  // 0.1 s gaps
  CHECK(transcript_sentences(uniform).size() == 1);
  CHECK(segment_transcript(uniform, "vid").size() == 1);

  std::vector<TimedWord> unordered = {{"a", 1.0, 1.2}, {"b", 0.5, 0.7}};
  CHECK_THROWS_AS(segment_transcript(unordered, "vid"), Error);
  std::vector<TimedWord> inverted = {{"a", 1.0, 0.5}};
  CHECK_THROWS_AS(segment_transcript(inverted, "vid"), Error);
}

TEST_CASE("punctuated sentences pack into one chunk until the limit") {
  std::vector<TimedWord> words;
  for (int i = 0; i < 30; ++i) {
    std::string w = "w" + std::to_string(i);
    if (i % 5 == 4) w += ".";
    words.push_back({w, i * 0.4, i * 0.4 + 0.3});
  }
  CHECK(transcript_sentences(words).size() == 6);
  CHECK(segment_transcript(words, "v", 0.8, 512).size() == 1);
  auto small = segment_transcript(words, "v", 0.8, 10);
  CHECK(small.size() == 3);
  for (const auto& c : small) CHECK(c.token_count <= 10);
}

TEST_CASE("transcript anchors cover every word without overlapping") {
  std::vector<TimedWord> words;
  double t = 0;
  std::uint64_t state = 12345;
  for (int i = 0; i < 400; ++i) {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    double gap = (state >> 33) % 10 == 0 ? 1.5 : 0.05;
    std::string w = "tok" + std::to_string(i);
    if ((state >> 20) % 13 == 0) w += "?";
    words.push_back({w, t, t + 0.25});
    t += 0.25 + gap;
  }
  auto chunks = segment_transcript(words, "v", 0.8, 25);
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    CHECK(chunks[i - 1].time_anchor->end_seconds <= chunks[i].time_anchor->start_seconds);
  }
  CHECK(chunks.front().time_anchor->start_seconds == words.front().start);
  CHECK(chunks.back().time_anchor->end_seconds == words.back().end);
  for (const auto& w : words) {
    int covering = 0;
    for (const auto& c : chunks) {
      if (c.time_anchor->start_seconds <= w.start && w.end <= c.time_anchor->end_seconds) ++covering;
    }
    CHECK(covering == 1);
  }
  for (const auto& c : chunks) CHECK(c.token_count <= 25);
}

TEST_CASE("transcript jsonl parsing") {
  auto words = parse_transcript_jsonl("{\"word\":\"hello\",\"start\":0.0,\"end\":0.4}\n\n{\"word\":\"there.\",\"start\":0.5,\"end\":0.9}\n");
  REQUIRE(words.size() == 2);
  CHECK(words[1].word == "there.");
  CHECK_THROWS_AS(parse_transcript_jsonl("{\"word\":1}"), Error);
}

TEST_CASE("incident csv parsing handles quoting") {
  auto recs = parse_incidents_csv(
      "id,problem,resolution\n"
      "I1,\"VPN fails, error 809\",\"Open port 1723\"\n"
      "I2,\"Printer says \"\"offline\"\"\",\n");
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].problem_text == "VPN fails, error 809");
  CHECK(recs[1].problem_text == "Printer says \"offline\"");
  CHECK(recs[1].resolution_text.empty());
  CHECK_THROWS_AS(parse_incidents_csv("id,resolution\nI1,x\n"), Error);
}

TEST_CASE("identical incidents form one cluster") {
  std::vector<IncidentRecord> incidents;
  for (int i = 0; i < 5; ++i) incidents.push_back({"I" + std::to_string(i), "outlook keeps crashing on start", "reinstall"});
  auto clusters = mine_incidents(incidents);
  REQUIRE(clusters.size() == 1);
  CHECK(clusters[0].member_ids.size() == 5);
  CHECK(clusters[0].answer == std::optional<std::string>("reinstall"));
}

TEST_CASE("disjoint incidents stay singletons; missing resolution needs curation") {
  std::vector<IncidentRecord> incidents = {{"a", "vpn token expired", "renew token"},
                                           {"b", "printer jammed paper", ""},
                                           {"c", "laptop battery swollen", "replace battery"}};
  auto clusters = mine_incidents(incidents, 0.6);
  REQUIRE(clusters.size() == 3);
  CHECK(clusters[1].needs_manual_curation);
  CHECK_FALSE(clusters[1].answer);
  CHECK_FALSE(clusters[0].needs_manual_curation);
  CHECK_THROWS_AS(mine_incidents({}), Error);
}

TEST_CASE("three-topic corpus recovers the topic partition") {
  const std::vector<std::vector<std::string>> topics = {
      {"vpn", "tunnel", "connect", "remote", "gateway"},
      {"printer", "toner", "paper", "tray", "spool"},
      {"password", "expired", "login", "locked", "account"}};
  std::vector<IncidentRecord> incidents;
  std::vector<int> truth;
  for (int d = 0; d < 10; ++d) {
    for (int t = 0; t < 3; ++t) {
      std::string text;
      for (int k = 0; k < 5; ++k) {
        // Every document carries four of its topic's five words.
        if (k != d % 5) text += topics[t][k] + " ";
      }
      incidents.push_back({"t" + std::to_string(t) + "d" + std::to_string(d), text, "fixed"});
      truth.push_back(t);
    }
  }
  // Oracle: exhaustive pairwise cosines separate intra-topic from
  // inter-topic pairs around the threshold.
  std::vector<std::vector<std::string>> docs;
  for (const auto& inc : incidents) docs.push_back(tokenize(inc.problem_text));
  auto vec = TfidfVectorizer::fit(docs);
  double min_intra = 1, max_inter = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (std::size_t j = i + 1; j < docs.size(); ++j) {
      double s = dot(vec.transform(docs[i]), vec.transform(docs[j]));
      if (truth[i] == truth[j]) {
        min_intra = std::min(min_intra, s);
      } else {
        max_inter = std::max(max_inter, s);
      }
    }
  }
  REQUIRE(min_intra > 0.6);
  REQUIRE(max_inter < 0.6);

  auto clusters = mine_incidents(incidents, 0.6);
  REQUIRE(clusters.size() == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(clusters[c].member_ids.size() == 10);
    for (const auto& id : clusters[c].member_ids) CHECK(id.substr(0, 2) == "t" + std::to_string(c));
  }
  // Determinism given input order.
  auto again = mine_incidents(incidents, 0.6);
  for (std::size_t c = 0; c < 3; ++c) CHECK(again[c].member_ids == clusters[c].member_ids);
}

TEST_CASE("mined clusters become answer units") {
  const std::vector<IncidentRecord> incidents = {
      {"a", "VPN drops every hour", "Update the VPN client"},
      {"b", "vpn  drops every hour", "Reinstall"},
      {"c", "VPN keeps dropping every hour", "Update the VPN client"},
      {"d", "Badge reader rejects my badge", ""},
  };
  std::vector<IncidentCluster> clusters(2);
  clusters[0].member_ids = {"a", "b", "c"};
  clusters[0].medoid_id = "a";
  clusters[0].question = incidents[0].problem_text;
  clusters[0].answer = "Update the VPN client & reboot";
  clusters[1].member_ids = {"d"};
  clusters[1].medoid_id = "d";
  clusters[1].question = incidents[3].problem_text;
  clusters[1].needs_manual_curation = true;

  const auto units = units_from_clusters(clusters, incidents);
  REQUIRE(units.size() == 1);
  CHECK(units[0].id == "M-a");
  CHECK(units[0].source == UnitSource::Mined);
  CHECK(units[0].primary_question == "VPN drops every hour");
  // "vpn  drops every hour" folds onto the primary question.
  CHECK(units[0].alternate_questions == std::vector<std::string>{"VPN keeps dropping every hour"});
  CHECK(units[0].answer == "<p>Update the VPN client &amp; reboot</p>");
  CHECK_NOTHROW(validate(units[0]));
}
