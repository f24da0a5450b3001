#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "deskqa/text.hpp"

namespace deskqa::testing {

// Dense reference: explicit column-stochastic matrix, fixed 2000 iterations.
inline std::vector<double> dense_textrank(const std::vector<std::string>& sentences) {
  const std::size_t n = sentences.size();
  std::vector<std::set<std::string>> sets;
  std::vector<double> lens;
  for (const auto& s : sentences) {
    auto t = tokenize(s);
    lens.push_back(static_cast<double>(t.size()));
    sets.emplace_back(t.begin(), t.end());
  }
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));  // m[to][from]
  for (std::size_t from = 0; from < n; ++from) {
    double total = 0;
    std::vector<double> row(n, 0.0);
    for (std::size_t to = 0; to < n; ++to) {
      if (to == from || lens[to] < 2 || lens[from] < 2) continue;
      double shared = 0;
      for (const auto& w : sets[from]) shared += sets[to].count(w);
      row[to] = shared / (std::log(lens[from]) + std::log(lens[to]));
      total += row[to];
    }
    for (std::size_t to = 0; to < n; ++to) m[to][from] = total > 0 ? row[to] / total : 1.0 / static_cast<double>(n);
  }
  std::vector<double> s(n, 1.0), next(n);
  for (int it = 0; it < 2000; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += m[i][j] * s[j];
      next[i] = 0.15 + 0.85 * acc;
    }
    s = next;
  }
  return s;
}

inline std::vector<std::string> hub_corpus() {
  std::vector<std::string> out;
  std::string hub = "central hub";
  for (int i = 0; i < 19; ++i) hub += " topic" + std::to_string(i);
  out.push_back("filler one two three");
  out.push_back(hub);
  for (int i = 2; i < 20; ++i) {
    out.push_back("unique" + std::to_string(i) + " words" + std::to_string(i) + " topic" + std::to_string(i - 1));
  }
  return out;
}

}  // namespace deskqa::testing
