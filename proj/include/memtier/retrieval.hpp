#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "memtier/errors.hpp"
#include "memtier/lexical.hpp"
#include "memtier/scoring.hpp"
#include "memtier/store.hpp"
#include "memtier/time.hpp"

namespace memtier {

enum class RetrievalMode { bm25, dense, hybrid_rrf };

inline std::string_view to_string(RetrievalMode m) {
  switch (m) {
    case RetrievalMode::bm25: return "bm25";
    case RetrievalMode::dense: return "dense";
    case RetrievalMode::hybrid_rrf: return "hybrid_rrf";
  }
  return "bm25";
}

inline RetrievalMode parse_retrieval_mode(std::string_view s) {
  if (s == "bm25") return RetrievalMode::bm25;
  if (s == "dense") return RetrievalMode::dense;
  if (s == "hybrid_rrf" || s == "hybrid") return RetrievalMode::hybrid_rrf;
  throw ValidationError("unknown retrieval mode: '" + std::string(s) + "'");
}

struct RetrievalConfig {
  std::optional<std::size_t> stage1_k1 = 5;  // nullopt: unbounded, scoping disabled
  std::size_t stage2_k = 4;
  std::size_t token_budget = 300;
  WeightVector weights;
  Normalisation variant = Normalisation::raw;
  RetrievalMode mode = RetrievalMode::bm25;
  std::size_t rrf_k = 60;
  DecayConfig decay;
  TierConfig tiers;
  Bm25Params bm25;
  bool include_facts = false;       // rank semantic facts alongside episodic entries
  bool prepend_timestamps = false;  // prefix packed lines with the entry timestamp

  void validate() const {
    if (stage1_k1 && *stage1_k1 == 0) throw ValidationError("stage1 k1 must be positive");
    if (stage2_k == 0) throw ValidationError("stage2 k must be positive");
    if (token_budget == 0) throw ValidationError("token budget must be positive");
    if (rrf_k == 0) throw ValidationError("rrf k must be positive");
    weights.validate();
    decay.validate();
    tiers.validate();
  }
};

// ---- embedders ------------------------------------------------------------

/// Maps texts to unit-length vectors of a fixed dimension.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) const = 0;
};

inline void l2_normalise(std::vector<double>& v) {
  double norm = 0.0;
  for (const double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : v) x /= norm;
  } else if (!v.empty()) {
    v[0] = 1.0;  // empty text: fixed basis vector
  }
}

/// Signed feature hashing of the lexical tokens. Pure and deterministic.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 64) : dimension_(dimension) {
    if (dimension_ == 0) throw ValidationError("embedding dimension must be positive");
  }

  std::size_t dimension() const override { return dimension_; }

  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
      std::vector<double> v(dimension_, 0.0);
      for (const auto& token : tokenize(text)) {
        const auto h = fnv1a({token});
        v[h % dimension_] += (h >> 63) != 0 ? -1.0 : 1.0;
      }
      l2_normalise(v);
      out.push_back(std::move(v));
    }
    return out;
  }

 private:
  std::size_t dimension_;
};

// ---- stage 1 --------------------------------------------------------------

/// BM25 over semantic facts (subject + relation + value).
class SemanticIndex {
 public:
  static SemanticIndex build(std::span<const SemanticFact> facts, Bm25Params params = {}) {
    SemanticIndex index;
    std::vector<Document> docs;
    docs.reserve(facts.size());
    for (const auto& f : facts) {
      docs.push_back({f.id, f.searchable_text()});
      index.sessions_.push_back(&f.session_ids);
    }
    index.bm25_ = Bm25Index::build(docs, params);
    return index;
  }

  const Bm25Index& bm25() const { return bm25_; }
  std::size_t size() const { return sessions_.size(); }
  const std::set<std::string>& sessions_of(std::size_t fact) const { return *sessions_.at(fact); }

 private:
  Bm25Index bm25_;
  std::vector<const std::set<std::string>*> sessions_;
};

/// Ranks facts by BM25 and walks them in rank order, collecting distinct
/// session ids until `k1` are gathered. Only positively scoring facts count.
/// Ties between facts keep index order.
inline std::vector<std::string> stage1_scope(std::span<const std::string> query_tokens,
                                             const SemanticIndex& index,
                                             std::optional<std::size_t> k1) {
  const auto scores = index.bm25().score_all(query_tokens);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::string> sessions;
  SessionSet seen;
  for (const auto i : order) {
    for (const auto& sid : index.sessions_of(i)) {
      if (k1 && sessions.size() >= *k1) return sessions;
      if (seen.insert(sid).second) sessions.push_back(sid);
    }
  }
  return sessions;
}

// ---- stage 2 --------------------------------------------------------------

/// A retrievable memory: an episodic entry, or a fact presented as one.
struct MemoryItem {
  EpisodicEntry entry;
  Tier tier = Tier::episodic;
};

struct RankedEntry {
  EpisodicEntry entry;
  Tier tier = Tier::episodic;
  ScoreBreakdown breakdown;
  std::optional<double> dense_similarity;
  std::optional<double> fused_score;
};

inline Candidate to_candidate(const MemoryItem& item, double raw_bm25, Timestamp as_of) {
  Candidate c;
  c.id = item.entry.id;
  c.session_id = item.entry.session_id;
  c.timestamp = item.entry.timestamp;
  c.raw_bm25 = raw_bm25;
  c.age_days = std::max(0.0, age_days(item.entry.timestamp, as_of));
  c.cognitive_weight = item.entry.cognitive_weight;
  c.tier = item.tier;
  return c;
}

/// Scores every pool item with the composite formula and returns the full
/// ranking. BM25 statistics are computed over the pool itself.
inline std::vector<RankedEntry> stage2_rank(std::span<const std::string> query_tokens,
                                            std::span<const MemoryItem> pool,
                                            const SessionSet& semantic_scope,
                                            const RetrievalConfig& cfg, Timestamp as_of) {
  std::vector<Document> docs;
  docs.reserve(pool.size());
  for (const auto& item : pool) docs.push_back({item.entry.id, item.entry.content});
  const auto index = Bm25Index::build(docs, cfg.bm25);
  const auto raw = index.score_all(query_tokens);

  std::vector<Candidate> candidates;
  candidates.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) candidates.push_back(to_candidate(pool[i], raw[i], as_of));
  const ScoringContext ctx{cfg.weights, cfg.tiers, cfg.decay, semantic_scope, cfg.variant};
  const auto scores = score_pool(candidates, ctx);
  const auto order = rank_pool(candidates, scores);

  std::vector<RankedEntry> ranked;
  ranked.reserve(pool.size());
  for (const auto i : order) ranked.push_back({pool[i].entry, pool[i].tier, scores[i], {}, {}});
  return ranked;
}

/// Top `stage2_k` of stage2_rank.
inline std::vector<RankedEntry> stage2_retrieve(std::span<const std::string> query_tokens,
                                                std::span<const MemoryItem> pool,
                                                const SessionSet& semantic_scope,
                                                const RetrievalConfig& cfg, Timestamp as_of) {
  auto ranked = stage2_rank(query_tokens, pool, semantic_scope, cfg, as_of);
  if (ranked.size() > cfg.stage2_k) ranked.resize(cfg.stage2_k);
  return ranked;
}

// ---- dense and fusion -----------------------------------------------------

struct DenseHit {
  std::size_t index = 0;  // into the candidate span
  double similarity = 0.0;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Cosine ranking via unit-vector dot products. Embedder failures propagate.
inline std::vector<DenseHit> dense_rank(std::string_view query, std::span<const MemoryItem> candidates,
                                        const Embedder& embedder) {
  std::vector<std::string> texts;
  texts.reserve(candidates.size() + 1);
  texts.emplace_back(query);
  for (const auto& c : candidates) texts.push_back(c.entry.content);
  const auto vectors = embedder.embed(texts);
  if (vectors.size() != texts.size()) {
    throw ExternalServiceError("embedder returned " + std::to_string(vectors.size()) +
                               " vectors for " + std::to_string(texts.size()) + " texts");
  }
  for (const auto& v : vectors) {
    if (v.size() != embedder.dimension()) throw ExternalServiceError("embedder dimension mismatch");
  }
  std::vector<DenseHit> hits;
  hits.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) hits.push_back({i, dot(vectors[0], vectors[i + 1])});
  std::sort(hits.begin(), hits.end(), [&](const DenseHit& a, const DenseHit& b) {
    const auto& ea = candidates[a.index].entry;
    const auto& eb = candidates[b.index].entry;
    return ranks_before(a.similarity, ea.timestamp, ea.id, b.similarity, eb.timestamp, eb.id);
  });
  return hits;
}

struct FusedItem {
  std::string id;
  double score = 0.0;
};

/// Reciprocal rank fusion: score(d) = sum over lists containing d of 1/(k + rank),
/// ranks starting at 1. Sorted by descending score, ties by ascending id.
inline std::vector<FusedItem> rrf_fuse(std::span<const std::vector<std::string>> rankings,
                                       std::size_t rrf_k) {
  std::unordered_map<std::string, double> scores;
  std::vector<std::string> order;
  for (const auto& ranking : rankings) {
    for (std::size_t r = 0; r < ranking.size(); ++r) {
      auto [it, inserted] = scores.try_emplace(ranking[r], 0.0);
      if (inserted) order.push_back(ranking[r]);
      it->second += 1.0 / static_cast<double>(rrf_k + r + 1);
    }
  }
  std::vector<FusedItem> fused;
  fused.reserve(order.size());
  for (auto& id : order) {
    const double s = scores[id];
    fused.push_back({std::move(id), s});
  }
  std::sort(fused.begin(), fused.end(), [](const FusedItem& a, const FusedItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return fused;
}

inline std::vector<FusedItem> rrf_fuse(const std::vector<std::string>& ranking_a,
                                       const std::vector<std::string>& ranking_b,
                                       std::size_t rrf_k) {
  const std::vector<std::string> both[] = {ranking_a, ranking_b};
  return rrf_fuse(std::span<const std::vector<std::string>>(both), rrf_k);
}

// ---- context --------------------------------------------------------------

struct PackedContext {
  std::string text;
  std::vector<std::string> entry_ids;
  std::size_t token_count = 0;
};

/// Appends entries in rank order while the running token total stays within
/// the budget. An entry larger than the whole budget is skipped; the first
/// entry that fits alone but not cumulatively ends packing.
inline PackedContext pack_context(std::span<const RankedEntry> ranked, std::size_t token_budget,
                                  bool prepend_timestamps = false) {
  if (token_budget == 0) throw ValidationError("token budget must be positive");
  PackedContext packed;
  for (const auto& r : ranked) {
    const std::size_t tokens = r.entry.tokens;
    if (tokens > token_budget) continue;
    if (packed.token_count + tokens > token_budget) break;
    if (!packed.text.empty()) packed.text += '\n';
    if (prepend_timestamps) packed.text += "[" + format_timestamp(r.entry.timestamp) + "] ";
    packed.text += r.entry.content;
    packed.entry_ids.push_back(r.entry.id);
    packed.token_count += tokens;
  }
  return packed;
}

struct OracleSession {
  std::string session_id;
  std::string text;
};

/// Gold context without retrieval: the first `limit` gold sessions in the
/// given order, followed by the gold facts.
inline std::string oracle_context(std::span<const OracleSession> gold_sessions,
                                  std::span<const std::string> gold_facts, std::size_t limit = 3) {
  if (gold_sessions.empty() && gold_facts.empty()) {
    throw ValidationError("oracle context needs gold sessions or gold facts");
  }
  std::string out;
  const auto n = std::min(limit, gold_sessions.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!out.empty()) out += '\n';
    out += gold_sessions[i].text;
  }
  for (const auto& f : gold_facts) {
    if (!out.empty()) out += '\n';
    out += f;
  }
  return out;
}

// ---- pipeline -------------------------------------------------------------

struct CorpusView {
  std::span<const EpisodicEntry> entries;
  std::span<const SemanticFact> facts;
};

struct StageLatency {
  std::int64_t stage1_micros = 0;
  std::int64_t stage2_micros = 0;
  std::int64_t dense_micros = 0;
  std::int64_t pack_micros = 0;
  std::int64_t total_micros = 0;
};

struct RetrievalResult {
  RetrievalMode mode = RetrievalMode::bm25;
  std::vector<RankedEntry> ranked;
  std::vector<std::string> scoped_session_ids;  // sessions searched in stage 2
  std::vector<std::string> semantic_scope;      // stage-1 sessions used by the bypass rule
  std::size_t total_sessions = 0;
  bool scoping_enabled = true;
  bool scope_fallback = false;  // stage 1 found nothing; stage 2 ran unscoped
  std::string packed_context;
  std::vector<std::string> packed_entry_ids;
  std::size_t packed_token_count = 0;
  StageLatency latency;

  double sessions_ratio() const {
    return total_sessions == 0 ? 0.0
                               : static_cast<double>(scoped_session_ids.size()) /
                                     static_cast<double>(total_sessions);
  }
};

inline MemoryItem fact_as_item(const SemanticFact& f) {
  MemoryItem item;
  item.tier = Tier::semantic;
  item.entry.id = f.id;
  item.entry.timestamp = f.created_at;
  item.entry.session_id = f.session_ids.empty() ? std::string{} : *f.session_ids.begin();
  item.entry.content = f.searchable_text();
  item.entry.tokens = whitespace_token_count(item.entry.content);
  return item;
}

/// Two-stage retrieval: semantic scoping, then composite (or dense / fused)
/// ranking of the scoped episodic pool, then token-budget packing.
/// Immutable after construction; `retrieve` is safe to call concurrently.
class RetrievalPipeline {
 public:
  explicit RetrievalPipeline(RetrievalConfig cfg, const Embedder* embedder = nullptr)
      : cfg_(std::move(cfg)), embedder_(embedder) {
    cfg_.validate();
    if (cfg_.mode != RetrievalMode::bm25 && embedder_ == nullptr) {
      throw ValidationError("dense and hybrid modes need an embedder");
    }
  }

  const RetrievalConfig& config() const { return cfg_; }

  RetrievalResult retrieve(const CorpusView& corpus, std::string_view query, Timestamp as_of) const {
    using clock = std::chrono::steady_clock;
    const auto micros = [](clock::time_point a, clock::time_point b) {
      return std::chrono::duration_cast<std::chrono::microseconds>(b - a).count();
    };
    RetrievalResult result;
    result.mode = cfg_.mode;
    result.scoping_enabled = cfg_.stage1_k1.has_value();
    const auto t0 = clock::now();
    const auto query_tokens = tokenize(query);

    SessionSet all_sessions;
    for (const auto& e : corpus.entries) {
      if (!e.system) all_sessions.insert(e.session_id);
    }
    result.total_sessions = all_sessions.size();

    const auto index = SemanticIndex::build(corpus.facts, cfg_.bm25);
    result.semantic_scope = stage1_scope(query_tokens, index, cfg_.stage1_k1);
    const SessionSet semantic_scope(result.semantic_scope.begin(), result.semantic_scope.end());
    bool scoped = result.scoping_enabled;
    if (scoped && semantic_scope.empty()) {
      scoped = false;
      result.scope_fallback = true;
    }
    result.scoped_session_ids = scoped ? result.semantic_scope
                                       : std::vector<std::string>(all_sessions.begin(), all_sessions.end());
    const auto t1 = clock::now();

    std::vector<MemoryItem> pool;
    for (const auto& e : corpus.entries) {
      if (e.system) continue;
      if (scoped && semantic_scope.find(e.session_id) == semantic_scope.end()) continue;
      pool.push_back({e, Tier::episodic});
    }
    if (cfg_.include_facts) {
      for (const auto& f : corpus.facts) {
        const bool in_scope = !scoped || std::any_of(f.session_ids.begin(), f.session_ids.end(),
                                                     [&](const std::string& s) {
                                                       return semantic_scope.count(s) != 0;
                                                     });
        if (in_scope) pool.push_back(fact_as_item(f));
      }
    }
    auto ranked = stage2_rank(query_tokens, pool, semantic_scope, cfg_, as_of);
    const auto t2 = clock::now();

    if (cfg_.mode != RetrievalMode::bm25 && !pool.empty()) {
      ranked = rerank_dense(query, pool, std::move(ranked));
    }
    const auto t3 = clock::now();

    if (ranked.size() > cfg_.stage2_k) ranked.resize(cfg_.stage2_k);
    auto packed = pack_context(ranked, cfg_.token_budget, cfg_.prepend_timestamps);
    result.ranked = std::move(ranked);
    result.packed_context = std::move(packed.text);
    result.packed_entry_ids = std::move(packed.entry_ids);
    result.packed_token_count = packed.token_count;
    const auto t4 = clock::now();

    result.latency = {micros(t0, t1), micros(t1, t2), micros(t2, t3), micros(t3, t4), micros(t0, t4)};
    return result;
  }

 private:
  std::vector<RankedEntry> rerank_dense(std::string_view query, std::span<const MemoryItem> pool,
                                        std::vector<RankedEntry> lexical) const {
    const auto hits = dense_rank(query, pool, *embedder_);
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < lexical.size(); ++i) by_id.emplace(lexical[i].entry.id, i);
    for (const auto& h : hits) lexical[by_id.at(pool[h.index].entry.id)].dense_similarity = h.similarity;

    std::vector<RankedEntry> out;
    out.reserve(lexical.size());
    if (cfg_.mode == RetrievalMode::dense) {
      for (const auto& h : hits) out.push_back(lexical[by_id.at(pool[h.index].entry.id)]);
      return out;
    }
    std::vector<std::string> lexical_ids, dense_ids;
    for (const auto& r : lexical) lexical_ids.push_back(r.entry.id);
    for (const auto& h : hits) dense_ids.push_back(pool[h.index].entry.id);
    for (const auto& f : rrf_fuse(lexical_ids, dense_ids, cfg_.rrf_k)) {
      auto item = lexical[by_id.at(f.id)];
      item.fused_score = f.score;
      out.push_back(std::move(item));
    }
    std::stable_sort(out.begin(), out.end(), [](const RankedEntry& a, const RankedEntry& b) {
      return ranks_before(*a.fused_score, a.entry.timestamp, a.entry.id, *b.fused_score,
                          b.entry.timestamp, b.entry.id);
    });
    return out;
  }

  RetrievalConfig cfg_;
  const Embedder* embedder_;
};

}  // namespace memtier
