#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "memtier/errors.hpp"
#include "memtier/lexical.hpp"
#include "memtier/store.hpp"

namespace memtier {

struct AttributionConfig {
  double alpha = 0.1;
  static constexpr std::array<double, 3> kRewardValues{-0.5, 0.0, 1.0};

  void validate() const {
    if (!(alpha > 0.0)) throw ValidationError("attribution alpha must be > 0");
  }
};

/// Tool outcome attached to an ingested record.
enum class Outcome { success, neutral, failure };

inline double outcome_reward(Outcome o) {
  switch (o) {
    case Outcome::success: return 1.0;
    case Outcome::neutral: return 0.0;
    case Outcome::failure: return -0.5;
  }
  return 0.0;
}

inline Outcome parse_outcome(std::string_view s) {
  if (s == "success") return Outcome::success;
  if (s == "neutral") return Outcome::neutral;
  if (s == "failure") return Outcome::failure;
  throw ValidationError("unknown outcome: '" + std::string(s) + "'");
}

/// Anything that keeps per-entry cognitive weights and accepts clipped deltas.
template <typename T>
concept CwLedger = requires(T& ledger, const std::string& id, double v) {
  { ledger.apply_cw_delta(id, v, v) } -> std::convertible_to<double>;
  { ledger.cognitive_weight(id) } -> std::convertible_to<double>;
};

/// Cognitive weights held in memory, for evaluation runs that never touch a workspace.
class InMemoryCwLedger {
 public:
  double apply_cw_delta(const std::string& entry_id, double delta, double reward) {
    auto& cw = weights_[entry_id];
    cw = clip_cw(cw + delta);
    records_.push_back({entry_id, delta, reward, Timestamp{}});
    return cw;
  }

  double cognitive_weight(const std::string& entry_id) const {
    const auto it = weights_.find(entry_id);
    return it == weights_.end() ? 0.0 : it->second;
  }

  const std::vector<CwLedgerRecord>& records() const { return records_; }

 private:
  std::unordered_map<std::string, double> weights_;
  std::vector<CwLedgerRecord> records_;
};

/// |T(a) ∩ T(b)| / |T(a) ∪ T(b)| over deduplicated lexical tokens; 0 when both are empty.
inline double jaccard_attribution(std::string_view answer, std::string_view entry) {
  const auto a_tokens = tokenize(answer);
  const auto b_tokens = tokenize(entry);
  const std::unordered_set<std::string> a(a_tokens.begin(), a_tokens.end());
  const std::unordered_set<std::string> b(b_tokens.begin(), b_tokens.end());
  if (a.empty() && b.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : a) common += b.count(t);
  const std::size_t total = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(total);
}

struct AttributionOutcome {
  std::vector<std::string> entry_ids;
  std::vector<double> raw;         // a_i
  std::vector<double> normalised;  // â_i, sums to 1
  std::vector<double> deltas;      // alpha * r * â_i
  bool uniform_fallback = false;   // no token overlap anywhere; credit split evenly
};

/// Pure part of the update. System entries are never attributed.
inline AttributionOutcome compute_attribution(std::span<const EpisodicEntry> retrieved,
                                              std::string_view answer, double reward,
                                              const AttributionConfig& cfg) {
  cfg.validate();
  const auto& allowed = AttributionConfig::kRewardValues;
  if (std::find(allowed.begin(), allowed.end(), reward) == allowed.end()) {
    throw ValidationError("reward must be one of -0.5, 0, +1");
  }
  AttributionOutcome out;
  for (const auto& e : retrieved) {
    if (e.system) continue;
    out.entry_ids.push_back(e.id);
    out.raw.push_back(jaccard_attribution(answer, e.content));
  }
  const std::size_t k = out.entry_ids.size();
  if (k == 0) return out;
  double total = 0.0;
  for (const double a : out.raw) total += a;
  out.normalised.resize(k);
  if (total > 0.0) {
    for (std::size_t i = 0; i < k; ++i) out.normalised[i] = out.raw[i] / total;
  } else {
    out.uniform_fallback = true;
    std::fill(out.normalised.begin(), out.normalised.end(), 1.0 / static_cast<double>(k));
  }
  out.deltas.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.deltas[i] = cfg.alpha * reward * out.normalised[i];
  return out;
}

/// CW_i <- clip(CW_i + alpha * r * â_i, -1, 1) for every retrieved entry.
/// Returns (entry id, new CW). A zero reward leaves the ledger untouched.
template <CwLedger Ledger>
std::vector<std::pair<std::string, double>> apply_attribution(Ledger& ledger,
                                                              std::span<const EpisodicEntry> retrieved,
                                                              std::string_view answer, double reward,
                                                              const AttributionConfig& cfg = {}) {
  const auto outcome = compute_attribution(retrieved, answer, reward, cfg);
  std::vector<std::pair<std::string, double>> updated;
  updated.reserve(outcome.entry_ids.size());
  for (std::size_t i = 0; i < outcome.entry_ids.size(); ++i) {
    const auto& id = outcome.entry_ids[i];
    if (reward == 0.0) {
      updated.emplace_back(id, ledger.cognitive_weight(id));
    } else {
      updated.emplace_back(id, ledger.apply_cw_delta(id, outcome.deltas[i], reward));
    }
  }
  return updated;
}

}  // namespace memtier
