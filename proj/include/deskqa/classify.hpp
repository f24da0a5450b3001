#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deskqa/retrieval.hpp"
#include "deskqa/store.hpp"

namespace deskqa::classify {

/// Class id -> questions (primary first, then alternates).
struct TrainingSet {
  std::map<std::string, std::vector<std::string>> classes;
};

/// One class per answer unit, from the unit's primary and alternate
/// questions.
TrainingSet training_set_from(const Snapshot& snapshot);

struct TrainOptions {
  int epochs = 50;
  double lambda = 1e-4;
  std::uint64_t seed = 42;
};

struct ClassPrediction {
  std::string class_id;
  double raw_margin = 0;
  double confidence = 0;
};

struct Prediction {
  std::vector<ClassPrediction> top;  // by confidence, ties by class id
  bool no_signal = false;            // no known feature in the question
};

/// Word unigram + bigram vocabulary. Indices never move once assigned, so a
/// model retrained with extra classes featurizes old questions identically.
class FeatureVocabulary {
 public:
  static std::vector<std::string> ngrams(std::string_view text);

  /// Keeps every term of `base` at its index and appends unseen n-grams in
  /// lexicographic order.
  static FeatureVocabulary build(const std::vector<std::string>& texts, const FeatureVocabulary* base = nullptr);

  /// L2-normalized term-frequency vector; unknown n-grams are ignored.
  SparseVector featurize(std::string_view text) const;

  std::size_t size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }
  static FeatureVocabulary from_terms(std::vector<std::string> terms);

 private:
  std::map<std::string, std::uint32_t, std::less<>> index_;
  std::vector<std::string> terms_;
};

/// Interface the orchestrator consumes; the linear model below is the only
/// implementation shipped.
class QuestionClassifier {
 public:
  virtual ~QuestionClassifier() = default;
  virtual Prediction predict(std::string_view question, std::size_t k = 5) const = 0;
  virtual std::vector<std::string> class_ids() const = 0;
};

struct TrainingMetadata {
  int epochs = 0;
  double lambda = 0;
  std::uint64_t seed = 0;
  std::uint64_t snapshot_id = 0;
  std::size_t skipped_empty = 0;
  std::vector<double> objective_history;  // mean over classes, after each epoch
  double final_objective = 0;
};

/// One-vs-rest linear model: one weight vector and bias per class, trained
/// with hinge loss and an L2 penalty.
class LinearModel final : public QuestionClassifier {
 public:
  /// Margins for every class; confidences are the softmax over all margins.
  Prediction predict(std::string_view question, std::size_t k = 5) const override;
  std::vector<std::string> class_ids() const override { return class_ids_; }

  std::vector<double> margins(const SparseVector& features) const;
  const FeatureVocabulary& vocabulary() const { return vocabulary_; }
  const TrainingMetadata& metadata() const { return meta_; }
  void set_snapshot_id(std::uint64_t id) { meta_.snapshot_id = id; }
  const std::vector<double>& weights(std::size_t cls) const { return weights_.at(cls); }
  double bias(std::size_t cls) const { return bias_.at(cls); }

  /// Versioned artifact with the vocabulary embedded.
  Json to_json() const;
  static LinearModel from_json(const Json& j);
  void save(const std::filesystem::path& path) const;
  static LinearModel load(const std::filesystem::path& path);

 private:
  friend LinearModel train(const TrainingSet&, const TrainOptions&, const LinearModel*);

  FeatureVocabulary vocabulary_;
  std::vector<std::string> class_ids_;
  std::vector<std::vector<double>> weights_;
  std::vector<double> bias_;
  TrainingMetadata meta_;
};

/// Minimizes (1/n) sum max(0, 1 - y (w.x + b)) + lambda |w|^2 per class by
/// SGD over a seeded shuffle. Fewer than two classes is an error; questions
/// without any token are skipped and counted. Passing `previous` keeps its
/// vocabulary indices stable.
LinearModel train(const TrainingSet& ts, const TrainOptions& options = {}, const LinearModel* previous = nullptr);

/// Hinge + L2 objective of one class's weights over a labelled sample set.
double ovr_objective(const std::vector<double>& w, double b, double lambda,
                     const std::vector<std::pair<SparseVector, int>>& samples);

struct RetrainCheck {
  bool needed = false;
  std::vector<std::string> changed_class_ids;
};

/// True when any answer unit was added or edited after the model's snapshot,
/// or a class the model knows has disappeared.
RetrainCheck needs_retrain(const LinearModel& model, const Snapshot& snapshot);

/// Fraction of (question, class id) pairs whose top prediction is correct.
double accuracy(const QuestionClassifier& model, const std::vector<std::pair<std::string, std::string>>& labelled);

}  // namespace deskqa::classify
