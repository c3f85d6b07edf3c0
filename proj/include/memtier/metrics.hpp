#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memtier/errors.hpp"

namespace memtier {

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
inline std::string normalize_answer(std::string_view text) {
  std::string stripped;
  stripped.reserve(text.size());
  for (const char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) continue;
    stripped.push_back(static_cast<char>(u < 0x80 ? std::tolower(u) : u));
  }
  std::istringstream words(stripped);
  std::string word, out;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

/// 1 when the normalised strings are equal or either contains the other.
/// An empty side only matches an empty side.
inline int soft_em(std::string_view prediction, std::string_view gold) {
  const auto p = normalize_answer(prediction);
  const auto g = normalize_answer(gold);
  if (p == g) return 1;
  if (p.empty() || g.empty()) return 0;
  return (p.find(g) != std::string::npos || g.find(p) != std::string::npos) ? 1 : 0;
}

inline std::vector<std::string> answer_tokens(std::string_view text) {
  std::istringstream words(normalize_answer(text));
  std::vector<std::string> out;
  std::string w;
  while (words >> w) out.push_back(w);
  return out;
}

/// Token F1 with multiset overlap on normalised tokens.
inline double token_f1(std::string_view prediction, std::string_view gold) {
  const auto p = answer_tokens(prediction);
  const auto g = answer_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  int overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

/// 1 when any of the first k retrieved items comes from a gold session.
inline int recall_at_k(std::span<const std::string> ranked_session_ids,
                       const std::set<std::string, std::less<>>& gold_sessions, std::size_t k) {
  if (k == 0) throw ValidationError("k must be >= 1");
  const auto n = std::min(k, ranked_session_ids.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (gold_sessions.count(ranked_session_ids[i]) != 0) return 1;
  }
  return 0;
}

/// Binary-relevance nDCG@k. The ideal ordering places every relevant item of
/// the given ranking first.
inline double ndcg_at_k(std::span<const std::string> ranked_session_ids,
                        const std::set<std::string, std::less<>>& gold_sessions, std::size_t k) {
  if (k == 0) throw ValidationError("k must be >= 1");
  double dcg = 0.0;
  std::size_t relevant = 0;
  for (std::size_t i = 0; i < ranked_session_ids.size(); ++i) {
    if (gold_sessions.count(ranked_session_ids[i]) == 0) continue;
    ++relevant;
    if (i < k) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  if (relevant == 0) return 0.0;
  double ideal = 0.0;
  for (std::size_t i = 0; i < std::min(relevant, k); ++i) ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / ideal;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Wilson score interval for an observed proportion over n trials.
inline Interval wilson_interval(double proportion, std::size_t n, double z = 1.96) {
  if (n == 0) throw ValidationError("wilson interval needs n >= 1");
  const double nn = static_cast<double>(n);
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (proportion + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(proportion * (1.0 - proportion) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

inline Interval wilson_ci(std::size_t successes, std::size_t n, double z = 1.96) {
  if (n == 0) throw ValidationError("wilson interval needs n >= 1");
  if (successes > n) throw ValidationError("successes exceed trials");
  return wilson_interval(static_cast<double>(successes) / static_cast<double>(n), n, z);
}

}  // namespace memtier
