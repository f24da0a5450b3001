#include <doctest.h>

#include <algorithm>
#include <random>

#include "deskqa/classify.hpp"
#include "deskqa/error.hpp"
#include "test_util.hpp"
#include "toy_data.hpp"

using namespace deskqa;
using namespace deskqa::classify;

namespace {

TrainingSet two_class_toy() {
  TrainingSet ts;
  ts.classes["vpn"] = {"vpn tunnel down", "cannot connect vpn tunnel", "vpn tunnel drops", "vpn tunnel slow",
                       "vpn tunnel error"};
  ts.classes["printer"] = {"printer toner empty", "printer toner smudge", "replace printer toner",
                           "printer toner light", "printer toner cartridge"};
  return ts;
}

// Oracle: the perceptron converges in finitely many passes iff the data is
// linearly separable, independently of the SGD trainer under test.
bool perceptron_separable(const TrainingSet& ts, const FeatureVocabulary& vocab) {
  std::vector<std::pair<SparseVector, int>> samples;
  int label = 1;
  for (const auto& [id, qs] : ts.classes) {
    for (const auto& q : qs) samples.emplace_back(vocab.featurize(q), label);
    label = -label;
  }
  std::vector<double> w(vocab.size(), 0.0);
  double b = 0;
  for (int pass = 0; pass < 1000; ++pass) {
    bool clean = true;
    for (const auto& [x, y] : samples) {
      double s = b;
      for (const auto& [i, v] : x) s += w[i] * v;
      if (y * s <= 0) {
        for (const auto& [i, v] : x) w[i] += y * v;
        b += y;
        clean = false;
      }
    }
    if (clean) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("separable two-class toy reaches full training accuracy") {
  auto ts = two_class_toy();
  auto model = train(ts);
  REQUIRE(perceptron_separable(ts, model.vocabulary()));
  std::vector<std::pair<std::string, std::string>> labelled;
  for (const auto& [id, qs] : ts.classes) {
    for (const auto& q : qs) labelled.emplace_back(q, id);
  }
  CHECK(accuracy(model, labelled) == 1.0);
  SUBCASE("a training question predicts its own class first") {
    auto p = model.predict("cannot connect vpn tunnel");
    REQUIRE_FALSE(p.top.empty());
    CHECK(p.top[0].class_id == "vpn");
    CHECK_FALSE(p.no_signal);
  }
}

TEST_CASE("same seed and data give a byte-identical model") {
  auto ts = deskqa::testing::toy_training_set(6);
  CHECK(train(ts).to_json().dump() == train(ts).to_json().dump());
  TrainOptions other;
  other.seed = 7;
  CHECK(train(ts, other).to_json().dump() != train(ts).to_json().dump());
}

TEST_CASE("fewer than two classes is an error") {
  TrainingSet ts;
  ts.classes["only"] = {"a question"};
  CHECK_THROWS_AS(train(ts), Error);
}

TEST_CASE("empty questions are skipped and counted") {
  auto ts = two_class_toy();
  ts.classes["vpn"].push_back("??");
  ts.classes["vpn"].push_back("");
  CHECK(train(ts).metadata().skipped_empty == 2);
}

TEST_CASE("out-of-vocabulary question gives softmax of biases and the no-signal flag") {
  auto model = train(deskqa::testing::toy_training_set(4));
  auto p = model.predict("zzzz qqqq", 10);
  CHECK(p.no_signal);
  REQUIRE(p.top.size() == 4);
  double z = 0;
  for (std::size_t c = 0; c < 4; ++c) z += std::exp(model.bias(c));
  double sum = 0;
  for (const auto& cp : p.top) {
    auto ids = model.class_ids();
    auto c = static_cast<std::size_t>(std::find(ids.begin(), ids.end(), cp.class_id) - ids.begin());
    CHECK(cp.confidence == doctest::Approx(std::exp(model.bias(c)) / z));
    sum += cp.confidence;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("equal biases and an empty question give uniform confidences") {
  // Hand-built model: zero weights, equal biases.
  Json j = train(two_class_toy()).to_json();
  for (auto& c : j["classes"]) {
    c["bias"] = 0.25;
    c["weights"] = Json::array();
  }
  auto model = LinearModel::from_json(j);
  auto p = model.predict("nothing known");
  REQUIRE(p.top.size() == 2);
  CHECK(p.top[0].confidence == doctest::Approx(0.5));
  CHECK(p.top[1].confidence == doctest::Approx(0.5));
  CHECK(p.no_signal);
}

TEST_CASE("k larger than the class count returns every class") {
  auto model = train(deskqa::testing::toy_training_set(3));
  CHECK(model.predict("vpn tunnel", 50).top.size() == 3);
  CHECK(model.predict("vpn tunnel", 2).top.size() == 2);
}

TEST_CASE("confidence ordering equals margin ordering and sums to one") {
  auto model = train(deskqa::testing::toy_training_set(8));
  std::mt19937_64 rng(3);
  const auto& vocab = model.vocabulary().terms();
  for (int trial = 0; trial < 300; ++trial) {
    std::string q;
    for (int w = 0; w < 1 + static_cast<int>(rng() % 6); ++w) q += vocab[rng() % vocab.size()] + " ";
    auto p = model.predict(q, 8);
    double sum = 0;
    for (std::size_t i = 0; i < p.top.size(); ++i) {
      sum += p.top[i].confidence;
      if (i > 0) {
        CHECK(p.top[i - 1].raw_margin >= p.top[i].raw_margin);
        CHECK(p.top[i - 1].confidence >= p.top[i].confidence);
      }
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("scaling margins keeps the ranking") {
  auto model = train(deskqa::testing::toy_training_set(5));
  Json j = model.to_json();
  for (auto& c : j["classes"]) {
    c["bias"] = c["bias"].get<double>() * 3.0;
    for (auto& w : c["weights"]) w[1] = w[1].get<double>() * 3.0;
  }
  auto scaled = LinearModel::from_json(j);
  for (const auto& [q, label] : deskqa::testing::toy_labelled(5, true)) {
    auto a = model.predict(q, 5);
    auto b = scaled.predict(q, 5);
    for (std::size_t i = 0; i < a.top.size(); ++i) CHECK(a.top[i].class_id == b.top[i].class_id);
  }
}

TEST_CASE("objective is recorded per epoch and does not increase") {
  auto model = train(deskqa::testing::toy_training_set(10));
  const auto& h = model.metadata().objective_history;
  REQUIRE(h.size() == 50);
  for (std::size_t e = 1; e < h.size(); ++e) CHECK(h[e] <= h[e - 1] + 1e-3);
  CHECK(h.back() <= h.front());
}

TEST_CASE("adding a class keeps old feature indices") {
  auto ts = deskqa::testing::toy_training_set(5);
  auto base = train(ts);
  auto bigger_ts = deskqa::testing::toy_training_set(6);
  bigger_ts.classes["aaa-new"] = {"zebra crossing light broken"};
  auto bigger = train(bigger_ts, {}, &base);
  CHECK(bigger.vocabulary().size() > base.vocabulary().size());
  for (const auto& [q, label] : deskqa::testing::toy_labelled(5, false)) {
    CHECK(base.vocabulary().featurize(q) == bigger.vocabulary().featurize(q));
  }
}

TEST_CASE("model file round trip") {
  deskqa::testing::TempDir dir;
  auto model = train(deskqa::testing::toy_training_set(4));
  model.set_snapshot_id(17);
  model.save(dir.path() / "model.json");
  auto loaded = LinearModel::load(dir.path() / "model.json");
  CHECK(loaded.to_json() == model.to_json());
  CHECK(loaded.metadata().snapshot_id == 17);
  CHECK_THROWS_AS(LinearModel::from_json(Json{{"format", "other"}}), Error);
}

TEST_CASE("needs_retrain tracks store changes after the model snapshot") {
  Store store;
  auto add = [&](const std::string& id, const std::string& q) {
    AnswerUnit u;
    u.id = id;
    u.primary_question = q;
    u.answer = "<p>answer</p>";
    store.upsert_answer_unit(u);
  };
  add("U1", "vpn tunnel down");
  add("U2", "printer toner empty");
  auto snap = store.snapshot();
  auto model = train(training_set_from(*snap));
  model.set_snapshot_id(snap->id);
  CHECK_FALSE(needs_retrain(model, *store.snapshot()).needed);

  add("U3", "laptop battery swollen");
  auto check = needs_retrain(model, *store.snapshot());
  CHECK(check.needed);
  CHECK(check.changed_class_ids == std::vector<std::string>{"U3"});

  auto snap2 = store.snapshot();
  auto model2 = train(training_set_from(*snap2));
  model2.set_snapshot_id(snap2->id);
  CHECK_FALSE(needs_retrain(model2, *store.snapshot()).needed);
  store.add_alternate_question("U1", "vpn keeps dropping");
  auto check2 = needs_retrain(model2, *store.snapshot());
  CHECK(check2.needed);
  CHECK(check2.changed_class_ids == std::vector<std::string>{"U1"});
}

TEST_CASE("training set from snapshot uses primary plus alternates") {
  Store store;
  AnswerUnit u;
  u.id = "U1";
  u.primary_question = "How do I reset my password?";
  u.alternate_questions = {"password reset steps?"};
  u.answer = "<p>x</p>";
  store.upsert_answer_unit(u);
  auto ts = training_set_from(*store.snapshot());
  CHECK(ts.classes.at("U1") == std::vector<std::string>{"How do I reset my password?", "password reset steps?"});
}
