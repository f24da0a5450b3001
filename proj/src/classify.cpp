#include "deskqa/classify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "deskqa/error.hpp"
#include "deskqa/text.hpp"

namespace deskqa::classify {

namespace {

constexpr const char* kFormat = "deskqa-linear-ovr";
constexpr int kFormatVersion = 1;
constexpr double kInitialRate = 0.5;

// Fisher-Yates driven by mt19937_64, whose output sequence is fixed by the
// standard; std::shuffle's use of the engine is implementation defined.
void seeded_shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

double sparse_dot(const std::vector<double>& w, const SparseVector& x) {
  double s = 0;
  for (const auto& [i, v] : x) s += w[i] * v;
  return s;
}

}  // namespace

TrainingSet training_set_from(const Snapshot& snapshot) {
  TrainingSet ts;
  for (const auto& [id, unit] : snapshot.units) {
    auto& qs = ts.classes[id];
    qs.push_back(unit.primary_question);
    qs.insert(qs.end(), unit.alternate_questions.begin(), unit.alternate_questions.end());
  }
  return ts;
}

std::vector<std::string> FeatureVocabulary::ngrams(std::string_view text) {
  auto tokens = tokenize(text);
  std::vector<std::string> out = tokens;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) out.push_back(tokens[i] + " " + tokens[i + 1]);
  return out;
}

FeatureVocabulary FeatureVocabulary::build(const std::vector<std::string>& texts, const FeatureVocabulary* base) {
  FeatureVocabulary v;
  if (base != nullptr) v = *base;
  std::set<std::string> fresh;
  for (const auto& t : texts) {
    for (auto& g : ngrams(t)) {
      if (v.index_.find(g) == v.index_.end()) fresh.insert(std::move(g));
    }
  }
  for (const auto& g : fresh) {
    v.index_.emplace(g, static_cast<std::uint32_t>(v.terms_.size()));
    v.terms_.push_back(g);
  }
  return v;
}

FeatureVocabulary FeatureVocabulary::from_terms(std::vector<std::string> terms) {
  FeatureVocabulary v;
  v.terms_ = std::move(terms);
  for (std::uint32_t i = 0; i < v.terms_.size(); ++i) {
    if (!v.index_.emplace(v.terms_[i], i).second) {
      throw Error(ErrorCode::ParseError, "duplicate vocabulary term: " + v.terms_[i]);
    }
  }
  return v;
}

SparseVector FeatureVocabulary::featurize(std::string_view text) const {
  std::map<std::uint32_t, double> counts;
  for (const auto& g : ngrams(text)) {
    auto it = index_.find(g);
    if (it != index_.end()) counts[it->second] += 1;
  }
  SparseVector x(counts.begin(), counts.end());
  double norm = 0;
  for (const auto& [i, v] : x) norm += v * v;
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (auto& [i, v] : x) v /= norm;
  }
  return x;
}

double ovr_objective(const std::vector<double>& w, double b, double lambda,
                     const std::vector<std::pair<SparseVector, int>>& samples) {
  double loss = 0;
  for (const auto& [x, y] : samples) loss += std::max(0.0, 1.0 - y * (sparse_dot(w, x) + b));
  double reg = 0;
  for (double v : w) reg += v * v;
  return (samples.empty() ? 0.0 : loss / static_cast<double>(samples.size())) + lambda * reg;
}

LinearModel train(const TrainingSet& ts, const TrainOptions& options, const LinearModel* previous) {
  if (ts.classes.size() < 2) {
    throw Error(ErrorCode::InvalidArgument, "training needs at least two classes");
  }
  if (options.epochs <= 0 || options.lambda < 0) {
    throw Error(ErrorCode::InvalidArgument, "epochs must be positive and lambda non-negative");
  }
  for (const auto& [id, qs] : ts.classes) {
    if (qs.empty()) throw Error(ErrorCode::InvalidArgument, "class " + id + " has no questions", id);
  }

  std::vector<std::string> texts;
  for (const auto& [id, qs] : ts.classes) texts.insert(texts.end(), qs.begin(), qs.end());

  LinearModel model;
  model.vocabulary_ = FeatureVocabulary::build(texts, previous != nullptr ? &previous->vocabulary() : nullptr);
  model.meta_.epochs = options.epochs;
  model.meta_.lambda = options.lambda;
  model.meta_.seed = options.seed;

  std::vector<SparseVector> xs;
  std::vector<std::size_t> labels;
  std::size_t cls = 0;
  for (const auto& [id, qs] : ts.classes) {
    model.class_ids_.push_back(id);
    for (const auto& q : qs) {
      auto x = model.vocabulary_.featurize(q);
      if (x.empty()) {
        ++model.meta_.skipped_empty;
        continue;
      }
      xs.push_back(std::move(x));
      labels.push_back(cls);
    }
    ++cls;
  }
  const std::size_t n_classes = model.class_ids_.size();
  const std::size_t dim = model.vocabulary_.size();
  model.weights_.assign(n_classes, std::vector<double>(dim, 0.0));
  model.bias_.assign(n_classes, 0.0);
  model.meta_.objective_history.assign(static_cast<std::size_t>(options.epochs), 0.0);

  std::vector<std::vector<std::pair<SparseVector, int>>> per_class(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    per_class[c].reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) per_class[c].emplace_back(xs[i], labels[i] == c ? 1 : -1);
  }

  const double lambda = options.lambda;
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& w = model.weights_[c];
    double& b = model.bias_[c];
    // The shuffle sequence is shared by all classes: seeded once per class
    // from the same seed.
    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Scaled representation w = scale * v makes the L2 shrink O(1).
    double scale = 1.0;
    std::vector<double> v(dim, 0.0);
    double rate = kInitialRate;
    double current = ovr_objective(w, b, lambda, per_class[c]);
    std::uint64_t t = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      seeded_shuffle(order, rng);
      const std::vector<double> saved_v = v;
      const double saved_scale = scale;
      const double saved_b = b;
      const std::uint64_t saved_t = t;
      for (std::size_t idx : order) {
        const double eta = rate / (1.0 + rate * lambda * static_cast<double>(t));
        ++t;
        const auto& x = xs[idx];
        const int y = labels[idx] == c ? 1 : -1;
        const double margin = y * (scale * sparse_dot(v, x) + b);
        scale *= (1.0 - 2.0 * eta * lambda);
        if (scale < 1e-9) {
          for (auto& e : v) e *= scale;
          scale = 1.0;
        }
        if (margin < 1.0) {
          for (const auto& [i, val] : x) v[i] += eta * y * val / scale;
          b += eta * y;
        }
      }
      std::vector<double> candidate(dim);
      for (std::size_t i = 0; i < dim; ++i) candidate[i] = scale * v[i];
      const double objective = ovr_objective(candidate, b, lambda, per_class[c]);
      if (objective > current) {
        // Reject an epoch that raised the objective and retry with a smaller step.
        v = saved_v;
        scale = saved_scale;
        b = saved_b;
        t = saved_t;
        rate *= 0.5;
      } else {
        w = std::move(candidate);
        current = objective;
      }
      model.meta_.objective_history[static_cast<std::size_t>(epoch)] += current / static_cast<double>(n_classes);
    }
  }
  model.meta_.final_objective = model.meta_.objective_history.back();
  return model;
}

std::vector<double> LinearModel::margins(const SparseVector& features) const {
  std::vector<double> m(class_ids_.size());
  for (std::size_t c = 0; c < class_ids_.size(); ++c) m[c] = sparse_dot(weights_[c], features) + bias_[c];
  return m;
}

Prediction LinearModel::predict(std::string_view question, std::size_t k) const {
  Prediction out;
  const auto x = vocabulary_.featurize(question);
  out.no_signal = x.empty();
  const auto m = margins(x);
  if (m.empty()) return out;
  const double max_m = *std::max_element(m.begin(), m.end());
  double z = 0;
  std::vector<double> e(m.size());
  for (std::size_t c = 0; c < m.size(); ++c) {
    e[c] = std::exp(m[c] - max_m);
    z += e[c];
  }
  std::vector<ClassPrediction> all;
  all.reserve(m.size());
  for (std::size_t c = 0; c < m.size(); ++c) all.push_back(ClassPrediction{class_ids_[c], m[c], e[c] / z});
  std::sort(all.begin(), all.end(), [](const ClassPrediction& a, const ClassPrediction& b) {
    if (a.raw_margin != b.raw_margin) return a.raw_margin > b.raw_margin;
    return a.class_id < b.class_id;
  });
  if (all.size() > k) all.resize(k);
  out.top = std::move(all);
  return out;
}

Json LinearModel::to_json() const {
  Json classes = Json::array();
  for (std::size_t c = 0; c < class_ids_.size(); ++c) {
    Json w = Json::array();
    for (std::size_t i = 0; i < weights_[c].size(); ++i) {
      if (weights_[c][i] != 0.0) w.push_back(Json::array({i, weights_[c][i]}));
    }
    classes.push_back(Json{{"id", class_ids_[c]}, {"bias", bias_[c]}, {"weights", w}});
  }
  return Json{{"format", kFormat},
              {"version", kFormatVersion},
              {"vocabulary", vocabulary_.terms()},
              {"classes", classes},
              {"meta",
               {{"epochs", meta_.epochs},
                {"lambda", meta_.lambda},
                {"seed", meta_.seed},
                {"snapshot_id", meta_.snapshot_id},
                {"skipped_empty", meta_.skipped_empty},
                {"objective_history", meta_.objective_history},
                {"final_objective", meta_.final_objective}}}};
}

LinearModel LinearModel::from_json(const Json& j) {
  if (j.value("format", "") != kFormat || j.value("version", 0) != kFormatVersion) {
    throw Error(ErrorCode::ParseError, "unsupported model format");
  }
  LinearModel m;
  m.vocabulary_ = FeatureVocabulary::from_terms(j.at("vocabulary").get<std::vector<std::string>>());
  const std::size_t dim = m.vocabulary_.size();
  for (const auto& c : j.at("classes")) {
    m.class_ids_.push_back(c.at("id").get<std::string>());
    m.bias_.push_back(c.at("bias").get<double>());
    std::vector<double> w(dim, 0.0);
    for (const auto& entry : c.at("weights")) {
      const auto i = entry.at(0).get<std::size_t>();
      if (i >= dim) throw Error(ErrorCode::ParseError, "weight index out of range");
      w[i] = entry.at(1).get<double>();
    }
    m.weights_.push_back(std::move(w));
  }
  const auto& meta = j.at("meta");
  m.meta_.epochs = meta.value("epochs", 0);
  m.meta_.lambda = meta.value("lambda", 0.0);
  m.meta_.seed = meta.value("seed", std::uint64_t{0});
  m.meta_.snapshot_id = meta.value("snapshot_id", std::uint64_t{0});
  m.meta_.skipped_empty = meta.value("skipped_empty", std::size_t{0});
  m.meta_.objective_history = meta.value("objective_history", std::vector<double>{});
  m.meta_.final_objective = meta.value("final_objective", 0.0);
  return m;
}

void LinearModel::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << to_json().dump() << '\n';
    if (!out) throw Error(ErrorCode::Io, "cannot write model to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

LinearModel LinearModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "model file not found: " + path.string());
  Json j;
  in >> j;
  return from_json(j);
}

RetrainCheck needs_retrain(const LinearModel& model, const Snapshot& snapshot) {
  std::set<std::string> changed;
  const auto known = model.class_ids();
  const std::set<std::string> known_set(known.begin(), known.end());
  for (const auto& [id, unit] : snapshot.units) {
    if (unit.revision > model.metadata().snapshot_id || known_set.count(id) == 0) changed.insert(id);
  }
  for (const auto& id : known) {
    if (snapshot.units.count(id) == 0) changed.insert(id);
  }
  RetrainCheck check;
  check.changed_class_ids.assign(changed.begin(), changed.end());
  check.needed = !check.changed_class_ids.empty();
  return check;
}

double accuracy(const QuestionClassifier& model, const std::vector<std::pair<std::string, std::string>>& labelled) {
  if (labelled.empty()) return 0;
  std::size_t correct = 0;
  for (const auto& [q, label] : labelled) {
    auto p = model.predict(q, 1);
    if (!p.top.empty() && p.top.front().class_id == label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labelled.size());
}

}  // namespace deskqa::classify
