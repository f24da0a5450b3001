#include "deskqa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "deskqa/error.hpp"
#include "deskqa/text.hpp"

namespace deskqa {

double dot(const SparseVector& a, const SparseVector& b) {
  double sum = 0;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first == b[j].first) {
      sum += a[i].second * b[j].second;
      ++i;
      ++j;
    } else if (a[i].first < b[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  return sum;
}

double TfidfVectorizer::tf(std::size_t count) { return count == 0 ? 0.0 : 1.0 + std::log(static_cast<double>(count)); }

double TfidfVectorizer::idf(std::size_t n_docs, std::size_t df) {
  return std::log(static_cast<double>(n_docs + 1) / static_cast<double>(df + 1)) + 1.0;
}

TfidfVectorizer TfidfVectorizer::fit(const std::vector<std::vector<std::string>>& docs) {
  std::map<std::string, std::size_t, std::less<>> df;
  for (const auto& doc : docs) {
    std::set<std::string_view> seen(doc.begin(), doc.end());
    for (auto term : seen) ++df[std::string(term)];
  }
  TfidfVectorizer v;
  v.n_docs_ = docs.size();
  for (const auto& [term, count] : df) {
    v.ids_.emplace(term, static_cast<std::uint32_t>(v.terms_.size()));
    v.terms_.push_back(term);
    v.df_.push_back(count);
    v.idf_.push_back(idf(docs.size(), count));
  }
  return v;
}

SparseVector TfidfVectorizer::transform(const std::vector<std::string>& tokens) const {
  std::map<std::uint32_t, std::size_t> counts;
  for (const auto& t : tokens) {
    auto it = ids_.find(t);
    if (it != ids_.end()) ++counts[it->second];
  }
  SparseVector out;
  out.reserve(counts.size());
  double norm = 0;
  for (const auto& [id, count] : counts) {
    double w = tf(count) * idf_[id];
    out.emplace_back(id, w);
    norm += w * w;
  }
  if (norm > 0) {
    norm = std::sqrt(norm);
    for (auto& [id, w] : out) w /= norm;
  }
  return out;
}

std::optional<std::uint32_t> TfidfVectorizer::term_id(std::string_view term) const {
  auto it = ids_.find(term);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

void to_json(Json& j, const SearchHit& hit) {
  Json hl = Json::array();
  for (const auto& h : hit.highlights) hl.push_back(Json::array({h.begin, h.end}));
  j = Json{{"chunk_id", hit.chunk_id}, {"score", hit.score}, {"highlights", hl}};
  if (hit.time_anchor) j["time_anchor"] = Json::array({hit.time_anchor->start_seconds, hit.time_anchor->end_seconds});
}

SearchIndex SearchIndex::build(const std::vector<Chunk>& chunks) {
  SearchIndex index;
  std::vector<const Chunk*> ordered;
  ordered.reserve(chunks.size());
  for (const auto& c : chunks) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(), [](const Chunk* a, const Chunk* b) { return a->id < b->id; });
  for (const Chunk* c : ordered) {
    index.docs_.push_back(Doc{c->id, tokenize(strip_tags(c->body)), c->time_anchor});
  }
  index.index_documents();
  return index;
}

SearchIndex SearchIndex::build(const Snapshot& snapshot) {
  std::vector<Chunk> chunks;
  chunks.reserve(snapshot.chunks.size());
  for (const auto& [id, c] : snapshot.chunks) chunks.push_back(c);
  auto index = build(chunks);
  index.snapshot_id_ = snapshot.id;
  return index;
}

void SearchIndex::index_documents() {
  std::vector<std::vector<std::string>> token_docs;
  token_docs.reserve(docs_.size());
  for (const auto& d : docs_) token_docs.push_back(d.tokens);
  vectorizer_ = TfidfVectorizer::fit(token_docs);
  postings_.assign(vectorizer_.vocabulary_size(), {});
  for (std::uint32_t doc = 0; doc < docs_.size(); ++doc) {
    for (const auto& [term, weight] : vectorizer_.transform(docs_[doc].tokens)) {
      postings_[term].push_back(Posting{doc, weight});
    }
  }
}

std::vector<SearchHit> SearchIndex::query(std::string_view text, std::size_t k) const {
  if (docs_.empty() || k == 0) return {};
  const auto tokens = tokenize(text);
  const SparseVector q = vectorizer_.transform(tokens);
  if (q.empty()) return {};

  std::unordered_map<std::uint32_t, double> scores;
  for (const auto& [term, qw] : q) {
    for (const auto& p : postings_[term]) scores[p.doc] += qw * p.weight;
  }
  std::vector<std::pair<std::uint32_t, double>> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return docs_[a.first].chunk_id < docs_[b.first].chunk_id;
  });
  if (ranked.size() > k) ranked.resize(k);

  std::set<std::string_view> query_terms(tokens.begin(), tokens.end());
  std::vector<SearchHit> hits;
  hits.reserve(ranked.size());
  for (const auto& [doc, score] : ranked) {
    const auto& d = docs_[doc];
    SearchHit hit;
    hit.chunk_id = d.chunk_id;
    hit.score = score;
    hit.time_anchor = d.time_anchor;
    std::size_t i = 0;
    while (i < d.tokens.size()) {
      if (query_terms.count(d.tokens[i]) == 0) {
        ++i;
        continue;
      }
      std::size_t start = i;
      while (i < d.tokens.size() && query_terms.count(d.tokens[i]) != 0) ++i;
      hit.highlights.push_back(Highlight{start, i});
    }
    hits.push_back(std::move(hit));
  }
  return hits;
}

std::size_t SearchIndex::postings_size(std::string_view term) const {
  auto id = vectorizer_.term_id(term);
  return id ? postings_[*id].size() : 0;
}

Json SearchIndex::to_json() const {
  Json docs = Json::array();
  for (const auto& d : docs_) {
    Json jd{{"chunk_id", d.chunk_id}, {"tokens", d.tokens}};
    if (d.time_anchor) jd["time_anchor"] = Json::array({d.time_anchor->start_seconds, d.time_anchor->end_seconds});
    docs.push_back(std::move(jd));
  }
  Json postings = Json::object();
  for (std::uint32_t t = 0; t < postings_.size(); ++t) {
    Json list = Json::array();
    for (const auto& p : postings_[t]) list.push_back(Json::array({p.doc, p.weight}));
    postings[vectorizer_.term(t)] = Json{{"df", vectorizer_.document_frequency(t)}, {"postings", list}};
  }
  return Json{{"format", "deskqa-index"},
              {"version", 1},
              {"snapshot_id", snapshot_id_},
              {"n_docs", docs_.size()},
              {"docs", docs},
              {"terms", postings}};
}

SearchIndex SearchIndex::from_json(const Json& j) {
  if (j.value("format", "") != "deskqa-index" || j.value("version", 0) != 1) {
    throw Error(ErrorCode::ParseError, "unsupported index cache format");
  }
  SearchIndex index;
  index.snapshot_id_ = j.value("snapshot_id", std::uint64_t{0});
  for (const auto& jd : j.at("docs")) {
    Doc d;
    d.chunk_id = jd.at("chunk_id").get<std::string>();
    d.tokens = jd.at("tokens").get<std::vector<std::string>>();
    if (jd.contains("time_anchor")) {
      d.time_anchor = TimeAnchor{jd["time_anchor"][0].get<double>(), jd["time_anchor"][1].get<double>()};
    }
    index.docs_.push_back(std::move(d));
  }
  // Weights are recomputed from tokens; the cached postings only serve as
  // a consistency check.
  index.index_documents();
  for (const auto& [term, entry] : j.at("terms").items()) {
    auto id = index.vectorizer_.term_id(term);
    if (!id || index.vectorizer_.document_frequency(*id) != entry.at("df").get<std::size_t>()) {
      throw Error(ErrorCode::ParseError, "index cache is inconsistent at term '" + term + "'");
    }
  }
  return index;
}

}  // namespace deskqa
