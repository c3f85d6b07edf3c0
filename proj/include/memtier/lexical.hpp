#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "memtier/errors.hpp"

namespace memtier {

/// Lowercases and splits on every run of non-alphanumeric ASCII characters.
/// Bytes >= 0x80 count as separators, so the tokenizer never splits inside
/// an ASCII word but also never emits partial UTF-8 sequences.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Unique terms in first-occurrence order.
inline std::vector<std::string> unique_terms(std::span<const std::string> tokens) {
  std::vector<std::string> out;
  std::unordered_set<std::string_view> seen;
  for (const auto& t : tokens) {
    if (seen.insert(t).second) out.push_back(t);
  }
  return out;
}

/// Count of whitespace-separated tokens; the `tokens` field of stored entries.
inline std::uint32_t whitespace_token_count(std::string_view text) {
  std::uint32_t count = 0;
  bool in_token = false;
  for (const char ch : text) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

struct Bm25Params {
  double k1 = 1.5;
  double b = 0.75;
};

struct Document {
  std::string id;
  std::string text;
};

/// Immutable Okapi BM25 index with raw (unnormalised) scoring.
///
/// IDF uses the nonnegative form ln(1 + (N - df + 0.5) / (df + 0.5)), so every
/// score is >= 0. Query tokens are deduplicated before scoring.
class Bm25Index {
 public:
  Bm25Index() = default;

  static Bm25Index build(std::span<const Document> docs, Bm25Params params = {}) {
    Bm25Index index;
    index.params_ = params;
    index.doc_ids_.reserve(docs.size());
    index.term_freqs_.reserve(docs.size());
    index.doc_lens_.reserve(docs.size());
    double total_len = 0.0;
    for (const auto& doc : docs) {
      if (!index.position_.emplace(doc.id, index.doc_ids_.size()).second) {
        throw ValidationError("duplicate doc id in BM25 index: '" + doc.id + "'");
      }
      index.doc_ids_.push_back(doc.id);
      std::unordered_map<std::string, std::uint32_t> tf;
      const auto tokens = tokenize(doc.text);
      for (const auto& t : tokens) ++tf[t];
      for (const auto& [term, _] : tf) ++index.doc_freq_[term];
      index.doc_lens_.push_back(static_cast<std::uint32_t>(tokens.size()));
      total_len += static_cast<double>(tokens.size());
      index.term_freqs_.push_back(std::move(tf));
    }
    index.avg_doc_len_ = docs.empty() ? 0.0 : total_len / static_cast<double>(docs.size());
    return index;
  }

  std::size_t doc_count() const { return doc_ids_.size(); }
  double avg_doc_len() const { return avg_doc_len_; }
  const Bm25Params& params() const { return params_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }

  std::uint32_t document_frequency(const std::string& term) const {
    const auto it = doc_freq_.find(term);
    return it == doc_freq_.end() ? 0 : it->second;
  }

  std::uint32_t term_frequency(std::size_t doc, const std::string& term) const {
    const auto& tf = term_freqs_.at(doc);
    const auto it = tf.find(term);
    return it == tf.end() ? 0 : it->second;
  }

  std::uint32_t doc_length(std::size_t doc) const { return doc_lens_.at(doc); }

  std::size_t position(std::string_view doc_id) const {
    const auto it = position_.find(std::string(doc_id));
    if (it == position_.end()) {
      throw NotFoundError("doc id not in BM25 index: '" + std::string(doc_id) + "'");
    }
    return it->second;
  }

  double idf(const std::string& term) const {
    const double n = static_cast<double>(doc_count());
    const double df = document_frequency(term);
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
  }

  double score(std::span<const std::string> query_tokens, std::string_view doc_id) const {
    return score_unique(unique_terms(query_tokens), position(doc_id));
  }

  /// Scores for every indexed document, in index order.
  std::vector<double> score_all(std::span<const std::string> query_tokens) const {
    const auto terms = unique_terms(query_tokens);
    std::vector<double> out(doc_count(), 0.0);
    for (std::size_t d = 0; d < doc_count(); ++d) out[d] = score_unique(terms, d);
    return out;
  }

 private:
  double score_unique(std::span<const std::string> terms, std::size_t doc) const {
    const auto& tf_map = term_freqs_[doc];
    const double len_ratio =
        avg_doc_len_ > 0.0 ? static_cast<double>(doc_lens_[doc]) / avg_doc_len_ : 0.0;
    const double norm = params_.k1 * (1.0 - params_.b + params_.b * len_ratio);
    double total = 0.0;
    for (const auto& term : terms) {
      const auto it = tf_map.find(term);
      if (it == tf_map.end()) continue;
      const double tf = it->second;
      total += idf(term) * tf * (params_.k1 + 1.0) / (tf + norm);
    }
    return total;
  }

  Bm25Params params_;
  std::vector<std::string> doc_ids_;
  std::unordered_map<std::string, std::size_t> position_;
  std::vector<std::unordered_map<std::string, std::uint32_t>> term_freqs_;
  std::vector<std::uint32_t> doc_lens_;
  std::unordered_map<std::string, std::uint32_t> doc_freq_;
  double avg_doc_len_ = 0.0;
};

}  // namespace memtier
