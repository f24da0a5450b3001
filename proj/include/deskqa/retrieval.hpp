#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "deskqa/store.hpp"

namespace deskqa {

/// Sorted (term id, weight) pairs.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

double dot(const SparseVector& a, const SparseVector& b);

/// tf-idf weighting shared by search, glossary construction and incident
/// clustering: tf = 1 + ln(count), idf = ln((N + 1) / (df + 1)) + 1, rows
/// L2-normalized.
class TfidfVectorizer {
 public:
  static double tf(std::size_t count);
  static double idf(std::size_t n_docs, std::size_t df);

  /// Terms get ids in lexicographic order, so fitting is independent of
  /// document order.
  static TfidfVectorizer fit(const std::vector<std::vector<std::string>>& docs);

  /// Unknown terms are ignored.
  SparseVector transform(const std::vector<std::string>& tokens) const;

  std::optional<std::uint32_t> term_id(std::string_view term) const;
  const std::string& term(std::uint32_t id) const { return terms_.at(id); }
  std::size_t document_frequency(std::uint32_t id) const { return df_.at(id); }
  double idf(std::uint32_t id) const { return idf_.at(id); }
  std::size_t n_docs() const { return n_docs_; }
  std::size_t vocabulary_size() const { return terms_.size(); }

 private:
  std::map<std::string, std::uint32_t, std::less<>> ids_;
  std::vector<std::string> terms_;
  std::vector<std::size_t> df_;
  std::vector<double> idf_;
  std::size_t n_docs_ = 0;

  friend class SearchIndex;
};

struct Highlight {
  std::size_t begin = 0;  // token offsets, end exclusive
  std::size_t end = 0;

  bool operator==(const Highlight&) const = default;
};

struct SearchHit {
  std::string chunk_id;
  double score = 0;
  std::vector<Highlight> highlights;
  std::optional<TimeAnchor> time_anchor;
};

void to_json(Json& j, const SearchHit& hit);

/// Inverted index over chunk text. Immutable once built.
class SearchIndex {
 public:
  static constexpr std::size_t kDefaultK = 10;

  SearchIndex() = default;
  static SearchIndex build(const std::vector<Chunk>& chunks);
  static SearchIndex build(const Snapshot& snapshot);

  /// Cosine ranking against every document sharing a query token; best
  /// first, ties by chunk id. Highlights are the maximal runs of matched
  /// query tokens in the chunk's token sequence.
  std::vector<SearchHit> query(std::string_view text, std::size_t k = kDefaultK) const;

  std::size_t size() const { return docs_.size(); }
  const TfidfVectorizer& vectorizer() const { return vectorizer_; }
  std::size_t postings_size(std::string_view term) const;
  std::uint64_t snapshot_id() const { return snapshot_id_; }

  /// Versioned JSON cache format ({"format":"deskqa-index","version":1,...}).
  Json to_json() const;
  static SearchIndex from_json(const Json& j);

 private:
  struct Posting {
    std::uint32_t doc = 0;
    double weight = 0;
  };
  struct Doc {
    std::string chunk_id;
    std::vector<std::string> tokens;
    std::optional<TimeAnchor> time_anchor;
  };

  void index_documents();

  TfidfVectorizer vectorizer_;
  std::vector<Doc> docs_;
  std::vector<std::vector<Posting>> postings_;  // by term id
  std::uint64_t snapshot_id_ = 0;
};

}  // namespace deskqa
