#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "memtier/errors.hpp"
#include "memtier/time.hpp"

namespace memtier {

using SessionSet = std::set<std::string, std::less<>>;

enum class Signal { sem, bm25, decay, cw, tier };

/// Retrieval weights w = [w_sem, w_bm25, w_decay, w_cw, w_tier].
struct WeightVector {
  double sem = 0.0;
  double bm25 = 0.35;
  double decay = 0.25;
  double cw = 0.25;
  double tier = 0.15;

  static WeightVector defaults() { return {}; }
  static WeightVector bm25_only() { return {0.0, 1.0, 0.0, 0.0, 0.0}; }
  static WeightVector equal_fusion() { return {0.0, 0.25, 0.25, 0.25, 0.25}; }

  std::array<double, 5> as_array() const { return {sem, bm25, decay, cw, tier}; }
  static WeightVector from_array(const std::array<double, 5>& a) {
    return {a[0], a[1], a[2], a[3], a[4]};
  }

  double sum() const {
    const auto a = as_array();
    return std::accumulate(a.begin(), a.end(), 0.0);
  }

  void validate() const {
    for (const double w : as_array()) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weights must be finite and >= 0");
    }
    if (std::abs(sum() - 1.0) > 1e-9) throw ValidationError("weights must sum to 1");
  }

  /// Sets one weight to zero and rescales the rest to sum to 1.
  WeightVector without(Signal s) const {
    auto a = as_array();
    a[static_cast<std::size_t>(s)] = 0.0;
    const double total = std::accumulate(a.begin(), a.end(), 0.0);
    if (total <= 0.0) throw ValidationError("cannot remove the only nonzero weight");
    for (auto& w : a) w /= total;
    return from_array(a);
  }

  bool operator==(const WeightVector&) const = default;
};

struct DecayConfig {
  double lambda = 0.05;  // per day; half-life ln2/lambda
  double bypass_threshold = 2.0;

  void validate() const {
    if (!(lambda > 0.0)) throw ValidationError("decay lambda must be > 0");
  }
};

enum class Tier { episodic, semantic, procedural };

struct TierConfig {
  double episodic = 1.0;
  double semantic = 1.2;
  double procedural = 1.4;

  double multiplier(Tier t) const {
    switch (t) {
      case Tier::episodic: return episodic;
      case Tier::semantic: return semantic;
      case Tier::procedural: return procedural;
    }
    return episodic;
  }

  void validate() const {
    if (episodic < 1.0 || semantic < 1.0 || procedural < 1.0) {
      throw ValidationError("tier multipliers must be >= 1");
    }
  }
};

enum class BypassReason { none, bm25_threshold, semantic_scope };

enum class Normalisation { raw, log1p, minmax, zscore, zscore_equal_fusion };

struct ScoreBreakdown {
  double phi_sem = 0.0;
  double phi_bm25_raw = 0.0;
  double phi_bm25 = 0.0;  // BM25 signal after the active normalisation
  double phi_decay = 0.0;
  double phi_cw = 0.0;
  double tier_bonus = 0.0;
  double composite = 0.0;
  bool bypass_applied = false;
  BypassReason bypass_reason = BypassReason::none;

  bool operator==(const ScoreBreakdown&) const = default;
};

/// What the scorer needs to know about one candidate memory.
struct Candidate {
  std::string id;
  std::string session_id;
  Timestamp timestamp{};
  double raw_bm25 = 0.0;
  double age_days = 0.0;
  double cognitive_weight = 0.0;
  Tier tier = Tier::episodic;
};

struct ScoringContext {
  WeightVector weights;
  TierConfig tiers;
  DecayConfig decay;
  SessionSet semantic_scope;
  Normalisation variant = Normalisation::raw;
};

inline double decay_signal(double age_days, bool bypass, const DecayConfig& cfg) {
  if (age_days < 0.0 || std::isnan(age_days)) throw ValidationError("age must be >= 0");
  if (bypass) return 1.0;
  return std::exp(-cfg.lambda * age_days);
}

struct BypassDecision {
  bool applied = false;
  BypassReason reason = BypassReason::none;
};

/// Strict inequality on the raw score; the lexical reason wins when both hold.
inline BypassDecision evaluate_bypass(double raw_bm25, std::string_view session_id,
                                      const SessionSet& semantic_scope, const DecayConfig& cfg) {
  if (raw_bm25 > cfg.bypass_threshold) return {true, BypassReason::bm25_threshold};
  if (semantic_scope.find(session_id) != semantic_scope.end()) {
    return {true, BypassReason::semantic_scope};
  }
  return {};
}

inline double cw_signal(double cw) {
  if (!(cw >= -1.0 && cw <= 1.0)) throw ValidationError("cognitive weight outside [-1, 1]");
  return (cw + 1.0) / 2.0;
}

/// Element-wise transform of a candidate pool's scores. minmax maps a constant
/// pool to 0.5; zscore uses the population standard deviation and maps a
/// constant pool to 0.
inline std::vector<double> normalise_scores(std::span<const double> scores, Normalisation variant) {
  if (scores.empty()) throw ValidationError("cannot normalise an empty score pool");
  std::vector<double> out(scores.begin(), scores.end());
  switch (variant) {
    case Normalisation::raw:
      break;
    case Normalisation::log1p:
      for (auto& s : out) s = std::log1p(s);
      break;
    case Normalisation::minmax: {
      const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
      const double range = *hi - *lo;
      for (auto& s : out) s = range > 0.0 ? (s - *lo) / range : 0.5;
      break;
    }
    case Normalisation::zscore:
    case Normalisation::zscore_equal_fusion: {
      const double n = static_cast<double>(scores.size());
      const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
      double var = 0.0;
      for (const double s : scores) var += (s - mean) * (s - mean);
      const double sd = std::sqrt(var / n);
      for (auto& s : out) s = sd > 0.0 ? (s - mean) / sd : 0.0;
      break;
    }
  }
  return out;
}

/// The weights actually applied under a normalisation variant. The equal-fusion
/// variant replaces the configured weights with [0, .25, .25, .25, .25].
inline WeightVector effective_weights(const WeightVector& w, Normalisation variant) {
  return variant == Normalisation::zscore_equal_fusion ? WeightVector::equal_fusion() : w;
}

/// S = w_bm25*phi_bm25 + w_decay*phi_decay + w_cw*phi_cw + w_tier*(mu - 1).
/// phi_sem is reserved and always 0. `bm25_signal` is the (possibly normalised)
/// BM25 value; bypass is always decided on the raw score.
inline ScoreBreakdown composite_score(const Candidate& c, double bm25_signal,
                                      const WeightVector& w, const TierConfig& tiers,
                                      const DecayConfig& decay, const SessionSet& semantic_scope) {
  ScoreBreakdown b;
  b.phi_sem = 0.0;
  b.phi_bm25_raw = c.raw_bm25;
  b.phi_bm25 = bm25_signal;
  const auto bypass = evaluate_bypass(c.raw_bm25, c.session_id, semantic_scope, decay);
  b.bypass_applied = bypass.applied;
  b.bypass_reason = bypass.reason;
  b.phi_decay = decay_signal(c.age_days, bypass.applied, decay);
  b.phi_cw = cw_signal(c.cognitive_weight);
  b.tier_bonus = w.tier * (tiers.multiplier(c.tier) - 1.0);
  b.composite = w.sem * b.phi_sem + w.bm25 * b.phi_bm25 + w.decay * b.phi_decay +
                w.cw * b.phi_cw + b.tier_bonus;
  return b;
}

/// Scores a whole pool under the context's normalisation variant.
inline std::vector<ScoreBreakdown> score_pool(std::span<const Candidate> pool,
                                              const ScoringContext& ctx) {
  if (pool.empty()) return {};
  std::vector<double> raw(pool.size());
  std::transform(pool.begin(), pool.end(), raw.begin(),
                 [](const Candidate& c) { return c.raw_bm25; });
  const auto signal = normalise_scores(raw, ctx.variant);
  const auto w = effective_weights(ctx.weights, ctx.variant);
  std::vector<ScoreBreakdown> out;
  out.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    out.push_back(composite_score(pool[i], signal[i], w, ctx.tiers, ctx.decay, ctx.semantic_scope));
  }
  return out;
}

/// Descending score; ties go to the newer timestamp, then the smaller id.
inline bool ranks_before(double score_a, Timestamp ts_a, std::string_view id_a, double score_b,
                         Timestamp ts_b, std::string_view id_b) {
  if (score_a != score_b) return score_a > score_b;
  if (ts_a != ts_b) return ts_a > ts_b;
  return id_a < id_b;
}

/// Indices into `pool` in rank order.
inline std::vector<std::size_t> rank_pool(std::span<const Candidate> pool,
                                          std::span<const ScoreBreakdown> scores) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ranks_before(scores[a].composite, pool[a].timestamp, pool[a].id, scores[b].composite,
                        pool[b].timestamp, pool[b].id);
  });
  return order;
}

inline std::string_view to_string(BypassReason r) {
  switch (r) {
    case BypassReason::none: return "none";
    case BypassReason::bm25_threshold: return "bm25_threshold";
    case BypassReason::semantic_scope: return "semantic_scope";
  }
  return "none";
}

inline std::string_view to_string(Normalisation n) {
  switch (n) {
    case Normalisation::raw: return "raw";
    case Normalisation::log1p: return "log1p";
    case Normalisation::minmax: return "minmax";
    case Normalisation::zscore: return "zscore";
    case Normalisation::zscore_equal_fusion: return "zscore_equal_fusion";
  }
  return "raw";
}

inline Normalisation parse_normalisation(std::string_view s) {
  if (s == "raw") return Normalisation::raw;
  if (s == "log1p") return Normalisation::log1p;
  if (s == "minmax") return Normalisation::minmax;
  if (s == "zscore") return Normalisation::zscore;
  if (s == "zscore_equal_fusion") return Normalisation::zscore_equal_fusion;
  throw ValidationError("unknown normalisation variant: '" + std::string(s) + "'");
}

inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::episodic: return "episodic";
    case Tier::semantic: return "semantic";
    case Tier::procedural: return "procedural";
  }
  return "episodic";
}

}  // namespace memtier
