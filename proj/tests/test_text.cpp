#include <doctest.h>

#include "deskqa/clock.hpp"
#include "deskqa/text.hpp"

using namespace deskqa;

TEST_CASE("tokenize lowercases and splits on non-alphanumerics") {
  CHECK(tokenize("How do I reset my PASSWORD?") ==
        std::vector<std::string>{"how", "do", "i", "reset", "my", "password"});
  CHECK(tokenize("  --  ").empty());
  CHECK(tokenize("e-mail v2.1") == std::vector<std::string>{"e", "mail", "v2", "1"});
}

TEST_CASE("token offsets point back into the source") {
  std::string text = "Reset, the Password";
  auto spans = tokenize_with_offsets(text);
  REQUIRE(spans.size() == 3);
  CHECK(text.substr(spans[2].begin, spans[2].end - spans[2].begin) == "Password");
  CHECK(spans[2].token == "password");
}

TEST_CASE("levenshtein") {
  CHECK(levenshtein("pasword", "password") == 1);
  CHECK(levenshtein("", "abc") == 3);
  CHECK(levenshtein("kitten", "sitting") == 3);
  CHECK(levenshtein("same", "same") == 0);
}

TEST_CASE("sentence splitting") {
  auto s = split_sentences("A card is a tool. It has a limit!  Why? e.g. this stays");
  REQUIRE(s.size() == 4);
  CHECK(s[0] == "A card is a tool.");
  CHECK(s[1] == "It has a limit!");
  CHECK(s[2] == "Why?");
  CHECK(s[3] == "e.g. this stays");
}

TEST_CASE("sanitize keeps the rich-text subset only") {
  CHECK(sanitize_html("<p>Hi <b>there</b></p>") == "<p>Hi <b>there</b></p>");
  CHECK(sanitize_html("<div class=\"x\"><p onclick=\"evil()\">a</p></div>") == "<p>a</p>");
  CHECK(sanitize_html("<script>alert(1)</script><p>ok</p>") == "<p>ok</p>");
  CHECK(sanitize_html("<img src=\"http://evil/x.png\"><img src=\"img/a.png\" alt=\"A\">") ==
        "<img src=\"img/a.png\" alt=\"A\">");
  CHECK(sanitize_html("<img src=\"data:image/png;base64,AAA\">") == "<img src=\"data:image/png;base64,AAA\">");
  CHECK(sanitize_html("<table><tr><td>1</td></tr></table>") == "<table><tr><td>1</td></tr></table>");
  SUBCASE("idempotent") {
    std::string messy = "<h1>T</h1><p>a &amp; b > c</p><span>x</span><a href=\"y\">link</a>";
    auto once = sanitize_html(messy);
    CHECK(sanitize_html(once) == once);
  }
}

TEST_CASE("strip_tags yields plain text") {
  CHECK(strip_tags("<p>Fees &amp; charges</p><ul><li>one</li><li>two</li></ul>") == "Fees & charges one two");
}

TEST_CASE("title case") {
  CHECK(title_case("debit card") == "Debit Card");
  CHECK(title_case("NEW card") == "New Card");
}

TEST_CASE("rfc3339 round trip") {
  Timestamp ts = 1700000000123456;
  CHECK(parse_rfc3339(format_rfc3339(ts)) == ts);
  CHECK(format_rfc3339(0) == "1970-01-01T00:00:00.000000Z");
}

TEST_CASE("system clock is strictly increasing") {
  auto clock = system_clock();
  Timestamp prev = clock();
  for (int i = 0; i < 1000; ++i) {
    Timestamp t = clock();
    CHECK(t > prev);
    prev = t;
  }
}
