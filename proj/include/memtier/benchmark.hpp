#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "memtier/attribution.hpp"
#include "memtier/config.hpp"
#include "memtier/dataset.hpp"
#include "memtier/errors.hpp"
#include "memtier/metrics.hpp"
#include "memtier/reader.hpp"
#include "memtier/retrieval.hpp"

namespace memtier {

enum class EvalMode { no_retrieval, retrieval, oracle };

inline std::string_view to_string(EvalMode m) {
  switch (m) {
    case EvalMode::no_retrieval: return "no_retrieval";
    case EvalMode::retrieval: return "retrieval";
    case EvalMode::oracle: return "oracle";
  }
  return "retrieval";
}

inline EvalMode parse_eval_mode(std::string_view s) {
  if (s == "no_retrieval") return EvalMode::no_retrieval;
  if (s == "retrieval") return EvalMode::retrieval;
  if (s == "oracle") return EvalMode::oracle;
  throw ValidationError("unknown eval mode: '" + std::string(s) + "'");
}

struct BenchmarkOptions {
  RetrievalConfig retrieval;
  EvalMode mode = EvalMode::retrieval;
  bool attribute_on_eval = false;  // correct answers credit packed entries with r = +1
  AttributionConfig attribution;
  Extractor* extractor = nullptr;  // semantic pre-population; null runs episodic-only
  const Embedder* embedder = nullptr;
  std::string label;
  ojson config_echo;  // embedded verbatim in the report
};

struct RetrievalTrace {
  std::vector<std::string> scoped_session_ids;
  std::vector<std::string> ranked_ids;
  std::vector<std::string> ranked_session_ids;
  std::vector<std::string> packed_ids;
  double sessions_ratio = 0.0;
  bool scope_fallback = false;
  int recall_at_1 = 0;
  int recall_at_2 = 0;
  int recall_at_4 = 0;
  double ndcg_at_4 = 0.0;
  StageLatency latency;
};

struct QuestionResult {
  std::string question_id;
  std::string question_type;
  std::string gold;
  std::string prediction;
  int em = 0;
  double f1 = 0.0;
  bool gold_in_context = false;
  bool reader_failed = false;
  std::string failure;
  std::optional<RetrievalTrace> trace;
};

struct TypeSummary {
  std::size_t n = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::string label;
  EvalMode mode = EvalMode::retrieval;
  ojson config;
  std::vector<QuestionResult> questions;
  std::vector<std::pair<std::string, TypeSummary>> by_type;
  double accuracy = 0.0;
  double f1 = 0.0;
  Interval accuracy_ci;
  Interval f1_ci;
  double gold_in_context_rate = 0.0;
  std::size_t reader_failures = 0;
  // Means over questions with a retrieval trace.
  double recall_at_1 = 0.0;
  double recall_at_2 = 0.0;
  double recall_at_4 = 0.0;
  double ndcg_at_4 = 0.0;
  double sessions_ratio = 0.0;
  std::size_t scope_fallbacks = 0;

  ojson summary_json() const {
    ojson types = ojson::object();
    for (const auto& [type, s] : by_type) types[type] = {{"n", s.n}, {"accuracy", s.accuracy}, {"f1", s.f1}};
    return ojson{{"kind", "summary"},
                 {"label", label},
                 {"mode", to_string(mode)},
                 {"n", questions.size()},
                 {"accuracy", accuracy},
                 {"accuracy_ci", {accuracy_ci.low, accuracy_ci.high}},
                 {"f1", f1},
                 {"f1_ci", {f1_ci.low, f1_ci.high}},
                 {"gold_in_context_rate", gold_in_context_rate},
                 {"reader_failures", reader_failures},
                 {"retrieval",
                  {{"recall_at_1", recall_at_1},
                   {"recall_at_2", recall_at_2},
                   {"recall_at_4", recall_at_4},
                   {"ndcg_at_4", ndcg_at_4},
                   {"sessions_ratio", sessions_ratio},
                   {"scope_fallbacks", scope_fallbacks}}},
                 {"by_type", types},
                 {"prompt_template", kReaderPromptTemplate},
                 {"config", config}};
  }

  static ojson question_json(const QuestionResult& q, bool include_latency) {
    ojson j{{"kind", "question"},
            {"question_id", q.question_id},
            {"question_type", q.question_type},
            {"gold", q.gold},
            {"prediction", q.prediction},
            {"em", q.em},
            {"f1", q.f1},
            {"gold_in_context", q.gold_in_context},
            {"reader_failed", q.reader_failed}};
    if (q.reader_failed) j["failure"] = q.failure;
    if (q.trace) {
      const auto& t = *q.trace;
      ojson trace{{"scoped_session_ids", t.scoped_session_ids},
                  {"ranked_ids", t.ranked_ids},
                  {"packed_ids", t.packed_ids},
                  {"sessions_ratio", t.sessions_ratio},
                  {"scope_fallback", t.scope_fallback},
                  {"recall_at_1", t.recall_at_1},
                  {"recall_at_2", t.recall_at_2},
                  {"recall_at_4", t.recall_at_4},
                  {"ndcg_at_4", t.ndcg_at_4}};
      if (include_latency) {
        trace["latency_micros"] = {{"stage1", t.latency.stage1_micros},
                                   {"stage2", t.latency.stage2_micros},
                                   {"dense", t.latency.dense_micros},
                                   {"pack", t.latency.pack_micros},
                                   {"total", t.latency.total_micros}};
      }
      j["trace"] = std::move(trace);
    }
    return j;
  }

  /// Summary line followed by one line per question. Latencies are left out
  /// unless asked for, so reports are byte-identical across runs.
  std::string to_jsonl(bool include_latency = false) const {
    std::string out = summary_json().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
    for (const auto& q : questions) {
      out += question_json(q, include_latency).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
      out += '\n';
    }
    return out;
  }

  std::string table() const {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %5s %8s %8s\n", "question_type", "n", "acc", "f1");
    out += line;
    for (const auto& [type, s] : by_type) {
      std::snprintf(line, sizeof line, "%-28s %5zu %8.3f %8.3f\n", type.c_str(), s.n, s.accuracy, s.f1);
      out += line;
    }
    std::snprintf(line, sizeof line, "%-28s %5zu %8.3f %8.3f  acc CI [%.3f, %.3f]\n", "overall",
                  questions.size(), accuracy, f1, accuracy_ci.low, accuracy_ci.high);
    out += line;
    return out;
  }
};

namespace detail {

inline void aggregate(EvalReport& report) {
  const auto n = report.questions.size();
  if (n == 0) return;
  std::map<std::string, TypeSummary> sums;  // accuracy holds the em count until divided
  std::size_t correct = 0, in_context = 0, traced = 0;
  double f1_total = 0.0;
  for (const auto& q : report.questions) {
    auto& s = sums[q.question_type];
    ++s.n;
    s.accuracy += q.em;
    s.f1 += q.f1;
    correct += static_cast<std::size_t>(q.em);
    f1_total += q.f1;
    in_context += q.gold_in_context ? 1 : 0;
    report.reader_failures += q.reader_failed ? 1 : 0;
    if (!q.trace) continue;
    ++traced;
    report.recall_at_1 += q.trace->recall_at_1;
    report.recall_at_2 += q.trace->recall_at_2;
    report.recall_at_4 += q.trace->recall_at_4;
    report.ndcg_at_4 += q.trace->ndcg_at_4;
    report.sessions_ratio += q.trace->sessions_ratio;
    report.scope_fallbacks += q.trace->scope_fallback ? 1 : 0;
  }
  const auto finish = [&sums, &report](const std::string& type) {
    auto s = sums.at(type);
    s.accuracy /= static_cast<double>(s.n);
    s.f1 /= static_cast<double>(s.n);
    report.by_type.emplace_back(type, s);
  };
  for (const auto& t : question_types()) {
    if (sums.count(t) != 0) finish(t);
  }
  for (const auto& [t, _] : sums) {
    const auto& known = question_types();
    if (std::find(known.begin(), known.end(), t) == known.end()) finish(t);
  }
  const double nn = static_cast<double>(n);
  report.accuracy = static_cast<double>(correct) / nn;
  report.f1 = f1_total / nn;
  report.accuracy_ci = wilson_ci(correct, n);
  report.f1_ci = wilson_interval(report.f1, n);
  report.gold_in_context_rate = static_cast<double>(in_context) / nn;
  if (traced > 0) {
    const double t = static_cast<double>(traced);
    report.recall_at_1 /= t;
    report.recall_at_2 /= t;
    report.recall_at_4 /= t;
    report.ndcg_at_4 /= t;
    report.sessions_ratio /= t;
  }
}

inline RetrievalTrace make_trace(const RetrievalResult& r, const BenchmarkQuestion& q) {
  RetrievalTrace t;
  t.scoped_session_ids = r.scoped_session_ids;
  for (const auto& e : r.ranked) {
    t.ranked_ids.push_back(e.entry.id);
    t.ranked_session_ids.push_back(e.entry.session_id);
  }
  t.packed_ids = r.packed_entry_ids;
  t.sessions_ratio = r.sessions_ratio();
  t.scope_fallback = r.scope_fallback;
  const std::set<std::string, std::less<>> gold(q.gold_session_ids.begin(), q.gold_session_ids.end());
  t.recall_at_1 = recall_at_k(t.ranked_session_ids, gold, 1);
  t.recall_at_2 = recall_at_k(t.ranked_session_ids, gold, 2);
  t.recall_at_4 = recall_at_k(t.ranked_session_ids, gold, 4);
  t.ndcg_at_4 = ndcg_at_k(t.ranked_session_ids, gold, 4);
  t.latency = r.latency;
  return t;
}

inline std::string question_oracle_context(const BenchmarkQuestion& q) {
  std::vector<OracleSession> gold;
  for (const auto& sid : q.gold_session_ids) {
    const auto it = std::find_if(q.sessions.begin(), q.sessions.end(),
                                 [&](const HaystackSession& s) { return s.session_id == sid; });
    if (it != q.sessions.end()) gold.push_back({sid, it->text()});
  }
  return oracle_context(gold, q.gold_facts);
}

}  // namespace detail

/// Runs every question through the selected context mode and the reader.
/// With attribution-on-eval, cognitive weights accumulate across questions in
/// an in-memory ledger, so question order matters and the run stays serial.
inline EvalReport run_benchmark(std::span<const BenchmarkQuestion> questions, Reader& reader,
                                const BenchmarkOptions& opts) {
  EvalReport report;
  report.label = opts.label.empty() ? std::string(to_string(opts.mode)) : opts.label;
  report.mode = opts.mode;
  report.config = opts.config_echo.is_null() ? ojson{{"retrieval", to_json(opts.retrieval)}} : opts.config_echo;
  report.config["eval_mode"] = to_string(opts.mode);
  report.config["attribute_on_eval"] = opts.attribute_on_eval;
  report.config["semantic_prepopulation"] = opts.extractor != nullptr;

  std::optional<RetrievalPipeline> pipeline;
  if (opts.mode == EvalMode::retrieval) pipeline.emplace(opts.retrieval, opts.embedder);
  InMemoryCwLedger ledger;

  for (const auto& q : questions) {
    QuestionResult res;
    res.question_id = q.question_id;
    res.question_type = q.question_type;
    res.gold = q.answer;
    std::string context;
    std::vector<EpisodicEntry> packed_entries;
    if (opts.mode == EvalMode::oracle) {
      context = detail::question_oracle_context(q);
    } else if (opts.mode == EvalMode::retrieval) {
      const auto corpus = build_question_corpus(q, opts.extractor, opts.attribute_on_eval ? &ledger : nullptr);
      const auto result = pipeline->retrieve(corpus.view(), q.question, corpus.as_of);
      context = result.packed_context;
      res.trace = detail::make_trace(result, q);
      const std::set<std::string> packed(result.packed_entry_ids.begin(), result.packed_entry_ids.end());
      for (const auto& r : result.ranked) {
        if (packed.count(r.entry.id) != 0 && r.tier == Tier::episodic) packed_entries.push_back(r.entry);
      }
    }
    res.gold_in_context = !q.answer.empty() && context.find(q.answer) != std::string::npos;
    try {
      res.prediction = reader.answer({q.question_id, q.question, context});
    } catch (const std::exception& ex) {
      res.reader_failed = true;
      res.failure = ex.what();
    }
    if (!res.reader_failed) {
      res.em = soft_em(res.prediction, q.answer);
      res.f1 = token_f1(res.prediction, q.answer);
    }
    if (opts.attribute_on_eval && res.em == 1 && !packed_entries.empty()) {
      apply_attribution(ledger, packed_entries, res.prediction, 1.0, opts.attribution);
    }
    report.questions.push_back(std::move(res));
  }
  detail::aggregate(report);
  return report;
}

// ---- ablation -------------------------------------------------------------

struct AblationCell {
  std::string label;
  RetrievalConfig retrieval;
  EvalMode mode = EvalMode::retrieval;
  bool semantic = true;  // pre-populate the semantic tier with the extractor
};

struct AblationRow {
  AblationCell cell;
  EvalReport report;

  ojson to_json() const {
    return ojson{{"label", cell.label},
                 {"mode", to_string(cell.mode)},
                 {"semantic", cell.semantic},
                 {"weights", memtier::to_json(cell.retrieval.weights)},
                 {"k", cell.retrieval.stage2_k},
                 {"budget", cell.retrieval.token_budget},
                 {"k1", k1_to_json(cell.retrieval.stage1_k1)},
                 {"variant", to_string(cell.retrieval.variant)},
                 {"retrieval_mode", to_string(cell.retrieval.mode)},
                 {"n", report.questions.size()},
                 {"accuracy", report.accuracy},
                 {"accuracy_ci", {report.accuracy_ci.low, report.accuracy_ci.high}},
                 {"f1", report.f1},
                 {"recall_at_4", report.recall_at_4},
                 {"ndcg_at_4", report.ndcg_at_4},
                 {"sessions_ratio", report.sessions_ratio}};
  }
};

inline std::vector<AblationRow> run_ablation(std::span<const BenchmarkQuestion> questions, Reader& reader,
                                             std::span<const AblationCell> grid, const BenchmarkOptions& base) {
  if (grid.empty()) throw ValidationError("ablation grid is empty");
  std::vector<AblationRow> rows;
  for (const auto& cell : grid) {
    BenchmarkOptions opts = base;
    opts.retrieval = cell.retrieval;
    opts.mode = cell.mode;
    opts.label = cell.label;
    opts.extractor = cell.semantic ? base.extractor : nullptr;
    if (!base.config_echo.is_null()) opts.config_echo["retrieval"] = to_json(cell.retrieval);
    rows.push_back({cell, run_benchmark(questions, reader, opts)});
  }
  return rows;
}

/// One cell per component removal or modification around `base`.
inline std::vector<AblationCell> table2_grid(const RetrievalConfig& base = {}) {
  std::vector<AblationCell> grid;
  grid.push_back({"full", base});
  auto bm25 = base;
  bm25.weights = WeightVector::bm25_only();
  grid.push_back({"bm25_only", bm25});
  grid.push_back({"no_retrieval", base, EvalMode::no_retrieval, false});
  grid.push_back({"no_semantic", base, EvalMode::retrieval, false});
  for (const auto& [name, signal] : {std::pair{"-decay", Signal::decay}, std::pair{"-cw", Signal::cw},
                                     std::pair{"-tier", Signal::tier}}) {
    auto c = base;
    c.weights = base.weights.without(signal);
    grid.push_back({name, c});
  }
  auto unscoped = base;
  unscoped.stage1_k1 = std::nullopt;
  grid.push_back({"-scoping", unscoped});
  for (const std::size_t k : {1, 2, 4, 8}) {
    auto c = base;
    c.stage2_k = k;
    grid.push_back({"k=" + std::to_string(k), c});
  }
  for (const std::size_t b : {150, 300, 600}) {
    auto c = base;
    c.token_budget = b;
    grid.push_back({"budget=" + std::to_string(b), c});
  }
  return grid;
}

inline std::vector<AblationCell> stage1_grid(const RetrievalConfig& base = {}) {
  std::vector<AblationCell> grid;
  for (const std::optional<std::size_t> k1 : {std::optional<std::size_t>(1), std::optional<std::size_t>(3),
                                              std::optional<std::size_t>(5), std::optional<std::size_t>(10),
                                              std::optional<std::size_t>()}) {
    auto c = base;
    c.stage1_k1 = k1;
    grid.push_back({"k1=" + (k1 ? std::to_string(*k1) : std::string("inf")), c});
  }
  return grid;
}

/// N0..N4. The last variant fixes its own equal-fusion weights.
inline std::vector<AblationCell> normalisation_grid(const RetrievalConfig& base = {}) {
  std::vector<AblationCell> grid;
  int i = 0;
  for (const auto v : {Normalisation::raw, Normalisation::log1p, Normalisation::minmax, Normalisation::zscore,
                       Normalisation::zscore_equal_fusion}) {
    auto c = base;
    c.variant = v;
    grid.push_back({"N" + std::to_string(i++) + ":" + std::string(to_string(v)), c});
  }
  return grid;
}

inline std::vector<AblationCell> dense_grid(const RetrievalConfig& base = {}) {
  std::vector<AblationCell> grid;
  for (const auto m : {RetrievalMode::bm25, RetrievalMode::dense, RetrievalMode::hybrid_rrf}) {
    auto c = base;
    c.mode = m;
    grid.push_back({std::string(to_string(m)), c});
  }
  return grid;
}

inline std::vector<AblationCell> cartesian_grid(const RetrievalConfig& base, std::span<const std::size_t> ks,
                                                std::span<const std::size_t> budgets) {
  std::vector<AblationCell> grid;
  for (const auto b : budgets) {
    for (const auto k : ks) {
      auto c = base;
      c.stage2_k = k;
      c.token_budget = b;
      grid.push_back({"k=" + std::to_string(k) + ",budget=" + std::to_string(b), c});
    }
  }
  return grid;
}

}  // namespace memtier
