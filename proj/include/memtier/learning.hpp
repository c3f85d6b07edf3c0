#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "memtier/dataset.hpp"
#include "memtier/errors.hpp"
#include "memtier/metrics.hpp"
#include "memtier/reader.hpp"
#include "memtier/retrieval.hpp"
#include "memtier/scoring.hpp"

namespace memtier {

// The policy acts on the four free weights; w_sem is pinned at 0.
using FreeWeights = std::array<double, 4>;  // bm25, decay, cw, tier

inline FreeWeights free_components(const WeightVector& w) { return {w.bm25, w.decay, w.cw, w.tier}; }
inline WeightVector from_free(const FreeWeights& f) { return {0.0, f[0], f[1], f[2], f[3]}; }

/// Clamp at 0 and rescale to sum 1. All-zero input maps to the uniform point.
inline FreeWeights project_to_simplex(FreeWeights v) {
  for (auto& x : v) x = std::max(0.0, x);
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  if (!(total > 0.0)) return {0.25, 0.25, 0.25, 0.25};
  for (auto& x : v) x /= total;
  return v;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Diagonal Gaussian over the free weights; sigma is held fixed during training.
struct WeightPolicy {
  WeightVector mean;
  FreeWeights sigma{0.15, 0.15, 0.15, 0.15};

  void validate() const {
    mean.validate();
    if (mean.sem != 0.0) throw ValidationError("policy mean must keep w_sem = 0");
    for (const double s : sigma) {
      if (!(s >= 0.0)) throw ValidationError("policy sigma must be >= 0");
    }
  }
};

struct SampledAction {
  FreeWeights action{};  // the raw Gaussian draw, used for likelihood ratios
  WeightVector weights;  // the draw projected onto the simplex
};

inline SampledAction sample_action(const WeightPolicy& policy, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto mean = free_components(policy.mean);
  SampledAction out;
  for (std::size_t j = 0; j < 4; ++j) out.action[j] = mean[j] + policy.sigma[j] * normal(rng);
  const bool deterministic =
      std::all_of(policy.sigma.begin(), policy.sigma.end(), [](double s) { return s == 0.0; });
  out.weights = deterministic ? policy.mean : from_free(project_to_simplex(out.action));
  return out;
}

inline WeightVector sample_weights(const WeightPolicy& policy, std::uint64_t seed) {
  return sample_action(policy, seed).weights;
}

/// +1 when the prediction soft-matches the gold answer, -1 otherwise.
inline double task_reward(std::string_view prediction, std::string_view gold) {
  return soft_em(prediction, gold) == 1 ? 1.0 : -1.0;
}

struct TrainingEpisode {
  std::string question_id;
  FreeWeights action{};
  FreeWeights behaviour_mean{};  // policy mean when the action was drawn
  WeightVector weights;
  double reward = 0.0;
  double advantage = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 4;
  std::size_t batch_size = 16;
  double clip_epsilon = 0.2;
  double step_size = 0.01;
  std::size_t question_count = 100;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || question_count == 0) {
      throw ValidationError("epochs, batch size and question count must be positive");
    }
    if (!(clip_epsilon > 0.0) || !(step_size > 0.0)) {
      throw ValidationError("clip epsilon and step size must be positive");
    }
  }
};

inline double gaussian_log_density(const FreeWeights& x, const FreeWeights& mean,
                                   const FreeWeights& sigma) {
  double lp = 0.0;
  for (std::size_t j = 0; j < 4; ++j) {
    if (sigma[j] <= 0.0) continue;
    const double z = (x[j] - mean[j]) / sigma[j];
    lp -= 0.5 * z * z;  // normalising constants cancel in ratios
  }
  return lp;
}

/// One clipped-surrogate gradient step on the policy mean.
///
/// Advantages are r_t - mean(r) and are written back into the batch. When every
/// advantage is exactly zero the gradient is identically zero and the policy is
/// returned unchanged, bit for bit.
inline WeightPolicy ppo_update(const WeightPolicy& policy, std::span<TrainingEpisode> batch,
                               const TrainConfig& cfg) {
  if (batch.empty()) throw ValidationError("ppo update needs a nonempty batch");
  double mean_reward = 0.0;
  for (const auto& ep : batch) mean_reward += ep.reward;
  mean_reward /= static_cast<double>(batch.size());
  bool any_signal = false;
  for (auto& ep : batch) {
    ep.advantage = ep.reward - mean_reward;
    any_signal = any_signal || ep.advantage != 0.0;
  }
  if (!any_signal) return policy;

  const auto mean = free_components(policy.mean);
  FreeWeights grad{};
  for (const auto& ep : batch) {
    const double ratio = std::exp(gaussian_log_density(ep.action, mean, policy.sigma) -
                                  gaussian_log_density(ep.action, ep.behaviour_mean, policy.sigma));
    const bool clipped = (ep.advantage > 0.0 && ratio > 1.0 + cfg.clip_epsilon) ||
                         (ep.advantage < 0.0 && ratio < 1.0 - cfg.clip_epsilon);
    if (clipped) continue;
    for (std::size_t j = 0; j < 4; ++j) {
      const double s = policy.sigma[j];
      if (s <= 0.0) continue;
      grad[j] += ep.advantage * ratio * (ep.action[j] - mean[j]) / (s * s);
    }
  }
  FreeWeights next = mean;
  for (std::size_t j = 0; j < 4; ++j) {
    next[j] += cfg.step_size * grad[j] / static_cast<double>(batch.size());
  }
  WeightPolicy updated = policy;
  updated.mean = from_free(project_to_simplex(next));
  return updated;
}

struct BatchLog {
  std::size_t batch = 0;
  double mean_reward = 0.0;
  WeightVector weights;  // policy mean after the update
};

struct TrainingResult {
  WeightPolicy initial;
  WeightPolicy policy;
  std::vector<BatchLog> log;
  std::size_t episodes = 0;
  std::size_t failures = 0;

  /// Learned minus initial, per weight.
  std::array<double, 5> delta() const {
    const auto a = policy.mean.as_array();
    const auto b = initial.mean.as_array();
    std::array<double, 5> d{};
    for (std::size_t i = 0; i < 5; ++i) d[i] = a[i] - b[i];
    return d;
  }
};

/// Generic PPO loop. `rollout(weights, item)` returns the episode reward.
/// Items are reshuffled each epoch; an update runs every `batch_size` episodes
/// and once more for a trailing partial batch.
template <typename Rollout>
TrainingResult train_policy(std::size_t item_count, Rollout&& rollout, const TrainConfig& cfg,
                            std::uint64_t seed, WeightPolicy init = {}) {
  cfg.validate();
  init.validate();
  TrainingResult result;
  result.initial = init;
  result.policy = init;
  std::mt19937_64 shuffle_rng(splitmix64(seed));
  std::vector<std::size_t> order(item_count);
  std::vector<TrainingEpisode> batch;
  std::uint64_t counter = 0;

  const auto flush = [&] {
    if (batch.empty()) return;
    result.policy = ppo_update(result.policy, batch, cfg);
    double mean_r = 0.0;
    for (const auto& ep : batch) mean_r += ep.reward;
    result.log.push_back({result.log.size(), mean_r / static_cast<double>(batch.size()), result.policy.mean});
    batch.clear();
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (const auto item : order) {
      const auto sampled = sample_action(result.policy, splitmix64(seed ^ splitmix64(++counter)));
      TrainingEpisode ep;
      ep.question_id = std::to_string(item);
      ep.action = sampled.action;
      ep.behaviour_mean = free_components(result.policy.mean);
      ep.weights = sampled.weights;
      ep.reward = rollout(sampled.weights, item);
      batch.push_back(std::move(ep));
      ++result.episodes;
      if (batch.size() == cfg.batch_size) flush();
    }
  }
  flush();
  return result;
}

/// Indices of `count` questions stratified by question_type in proportion to
/// the dataset's type shares (largest-remainder rounding), chosen with `seed`.
/// Returned in ascending order.
inline std::vector<std::size_t> stratified_sample(std::span<const BenchmarkQuestion> questions,
                                                  std::size_t count, std::uint64_t seed) {
  count = std::min(count, questions.size());
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < questions.size(); ++i) groups[questions[i].question_type].push_back(i);

  struct Quota {
    std::string type;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [type, members] : groups) {
    const double exact = static_cast<double>(count) * static_cast<double>(members.size()) /
                         static_cast<double>(questions.size());
    const auto take = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({type, take, exact - static_cast<double>(take)});
    assigned += take;
  }
  std::stable_sort(quotas.begin(), quotas.end(),
                   [](const Quota& a, const Quota& b) { return a.remainder > b.remainder; });
  for (std::size_t i = 0; assigned < count; i = (i + 1) % quotas.size()) {
    if (quotas[i].take < groups[quotas[i].type].size()) {
      ++quotas[i].take;
      ++assigned;
    }
  }
  std::mt19937_64 rng(splitmix64(seed));
  std::vector<std::size_t> out;
  for (const auto& q : quotas) {
    auto members = groups[q.type];
    std::shuffle(members.begin(), members.end(), rng);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(q.take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

enum class RewardMode {
  task_success,  // +1 / -1 from soft exact match
  cw_proxy,      // mean CW of the packed entries; reproduces the circular-reward trap
};

struct DatasetTrainOptions {
  TrainConfig train;
  RewardMode reward = RewardMode::task_success;
  Extractor* extractor = nullptr;  // semantic pre-population; null for episodic-only
  std::uint64_t seed = 42;
  WeightPolicy init;
};

using PipelineFactory = std::function<RetrievalPipeline(const WeightVector&)>;

/// Trains retrieval weights on a QA dataset: each episode samples weights,
/// retrieves, asks the reader and scores the answer. A reader failure counts
/// as reward -1.
inline TrainingResult train(std::span<const BenchmarkQuestion> questions,
                            const PipelineFactory& make_pipeline, Reader& reader,
                            const DatasetTrainOptions& opts) {
  if (questions.empty()) throw ValidationError("training needs at least one question");
  const auto picked = stratified_sample(questions, opts.train.question_count, opts.seed);
  std::vector<QuestionCorpus> corpora;
  corpora.reserve(picked.size());
  for (const auto i : picked) corpora.push_back(build_question_corpus(questions[i], opts.extractor));

  std::size_t failures = 0;
  auto rollout = [&](const WeightVector& w, std::size_t item) -> double {
    const auto& q = questions[picked[item]];
    const auto& corpus = corpora[item];
    const auto pipeline = make_pipeline(w);
    const auto result = pipeline.retrieve(corpus.view(), q.question, corpus.as_of);
    if (opts.reward == RewardMode::cw_proxy) {
      if (result.ranked.empty()) return 0.0;
      double total = 0.0;
      for (const auto& r : result.ranked) total += r.entry.cognitive_weight;
      return total / static_cast<double>(result.ranked.size());
    }
    try {
      const auto answer = reader.answer({q.question_id, q.question, result.packed_context});
      return task_reward(answer, q.answer);
    } catch (const std::exception&) {
      ++failures;
      return -1.0;
    }
  };
  auto result = train_policy(picked.size(), rollout, opts.train, opts.seed, opts.init);
  result.failures = failures;
  return result;
}

}  // namespace memtier
