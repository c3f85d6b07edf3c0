#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include "memtier/errors.hpp"
#include "memtier/lexical.hpp"
#include "memtier/store.hpp"
#include "memtier/time.hpp"

namespace memtier {

struct FactDraft {
  std::string subject;
  std::string relation;
  std::string value;

  bool operator==(const FactDraft&) const = default;
  auto operator<=>(const FactDraft&) const = default;
};

/// Distils one session transcript into fact drafts. Implementations only ever
/// see transcripts and session metadata, never evaluation questions.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::vector<FactDraft> extract(const std::string& session_id,
                                         const std::string& session_text) = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

/// Trims whitespace and trailing sentence punctuation, then keeps at most `max_tokens` words.
inline std::string clean_phrase(std::string_view s, std::size_t max_tokens = 12) {
  s = trim(s);
  while (!s.empty() && std::string_view(".!?,;").find(s.back()) != std::string_view::npos) {
    s.remove_suffix(1);
    s = trim(s);
  }
  std::istringstream words{std::string(s)};
  std::string word, out;
  for (std::size_t n = 0; n < max_tokens && (words >> word); ++n) {
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool is_capitalised_word(std::string_view w) {
  if (w.empty() || !std::isupper(static_cast<unsigned char>(w.front()))) return false;
  return std::all_of(w.begin(), w.end(), [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && (std::isalnum(u) || c == '\'' || c == '-');
  });
}

/// Runs of two or more capitalised words. Punctuation after a word ends the run.
inline std::vector<std::string> capitalised_entities(std::string_view line) {
  std::vector<std::string> out;
  std::vector<std::string> run;
  auto flush = [&] {
    if (run.size() >= 2) {
      std::string joined;
      for (const auto& w : run) joined += (joined.empty() ? "" : " ") + w;
      out.push_back(std::move(joined));
    }
    run.clear();
  };
  std::istringstream words{std::string(line)};
  std::string raw;
  while (words >> raw) {
    std::string_view w(raw);
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.front())) && w.front() != '\'') {
      w.remove_prefix(1);
    }
    bool breaks = false;
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back())) && w.back() != '\'') {
      w.remove_suffix(1);
      breaks = true;
    }
    if (is_capitalised_word(w)) {
      run.emplace_back(w);
      if (breaks) flush();
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace detail

/// Pattern rules applied line by line:
///   "A: B"                -> (A, kv, B)
///   "A is B"              -> (A, is_a, B)
///   "A prefers/likes B"   -> (A, prefers, B)
///   capitalised multiword -> (entity, mentioned_in, session_id)
/// Of the first three, the pattern whose keyword occurs earliest wins.
/// Phrases are trimmed and capped at 12 tokens; duplicates are dropped.
inline std::vector<FactDraft> extract_facts_heuristic(std::string_view session_id,
                                                      std::string_view text) {
  std::vector<FactDraft> out;
  std::set<FactDraft> seen;
  auto emit = [&](std::string_view subject, std::string relation, std::string_view value) {
    FactDraft d{detail::clean_phrase(subject), std::move(relation), detail::clean_phrase(value)};
    if (d.subject.empty() || d.value.empty()) return;
    if (seen.insert(d).second) out.push_back(std::move(d));
  };

  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find('\n', start), text.size());
    const auto line = detail::trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty() || is_system_content(line)) continue;

    const auto lower = detail::lowercase(line);
    struct Match {
      std::size_t pos;
      std::size_t len;
      const char* relation;
    };
    std::vector<Match> matches;
    if (const auto p = line.find(':'); p != std::string_view::npos && p > 0 &&
                                       line.substr(p + 1, 1) != "/") {
      matches.push_back({p, 1, "kv"});
    }
    for (const auto& [kw, rel] : {std::pair{" is ", "is_a"}, std::pair{" prefers ", "prefers"},
                                  std::pair{" likes ", "prefers"}}) {
      if (const auto p = lower.find(kw); p != std::string::npos) {
        matches.push_back({p, std::string_view(kw).size(), rel});
      }
    }
    if (!matches.empty()) {
      const auto m = *std::min_element(matches.begin(), matches.end(),
                                       [](const Match& a, const Match& b) { return a.pos < b.pos; });
      emit(line.substr(0, m.pos), m.relation, line.substr(m.pos + m.len));
    }
    for (const auto& entity : detail::capitalised_entities(line)) {
      emit(entity, "mentioned_in", session_id);
    }
    if (end == text.size()) break;
  }
  return out;
}

class HeuristicExtractor final : public Extractor {
 public:
  std::vector<FactDraft> extract(const std::string& session_id,
                                 const std::string& session_text) override {
    return extract_facts_heuristic(session_id, session_text);
  }
};

inline std::string fact_id_for(std::string_view session_id, const FactDraft& d) {
  return "f-" + hex64(fnv1a({session_id, d.subject, d.relation, d.value}));
}

inline SemanticFact make_fact(const std::string& session_id, const FactDraft& d,
                              std::set<std::string> source_entry_ids, Timestamp created_at) {
  SemanticFact f;
  f.id = fact_id_for(session_id, d);
  f.subject = d.subject;
  f.relation = d.relation;
  f.value = d.value;
  f.session_ids = {session_id};
  f.source_entry_ids = std::move(source_entry_ids);
  f.created_at = created_at;
  return f;
}

struct SessionFailure {
  std::string session_id;
  std::string message;
};

struct ConsolidationReport {
  std::size_t sessions_scanned = 0;
  std::size_t facts_emitted = 0;
  std::size_t entries_promoted = 0;
  std::vector<SessionFailure> failures;
  std::int64_t duration_micros = 0;
};

/// One consolidation pass over a project. Every session holding an unpromoted
/// entry is sent to the extractor; new facts are published in a single batch,
/// then every entry of each processed session is marked promoted. Sessions
/// whose extraction fails stay unpromoted and are retried by the next pass.
inline ConsolidationReport run_consolidation_pass(MemoryStore& store, Extractor& extractor,
                                                  std::string_view project,
                                                  Timestamp now = now_utc()) {
  const auto started = std::chrono::steady_clock::now();
  ConsolidationReport report;
  const auto entries = store.load_entries(project).entries;

  std::vector<std::string> session_order;
  std::map<std::string, std::vector<const EpisodicEntry*>> by_session;
  for (const auto& e : entries) {
    auto [it, inserted] = by_session.try_emplace(e.session_id);
    if (inserted) session_order.push_back(e.session_id);
    it->second.push_back(&e);
  }

  std::vector<SemanticFact> facts;
  std::vector<PromotionRecord> promotions;
  for (const auto& sid : session_order) {
    const auto& members = by_session[sid];
    const bool pending = std::any_of(members.begin(), members.end(),
                                     [](const EpisodicEntry* e) { return !e->promoted; });
    if (!pending) continue;
    ++report.sessions_scanned;

    std::string text;
    std::set<std::string> sources;
    for (const auto* e : members) {
      if (e->system) continue;
      if (!text.empty()) text += '\n';
      text += e->content;
      sources.insert(e->id);
    }
    std::vector<FactDraft> drafts;
    try {
      drafts = extractor.extract(sid, text);
    } catch (const std::exception& ex) {
      report.failures.push_back({sid, ex.what()});
      continue;
    }
    std::string first_fact;
    for (const auto& d : drafts) {
      if (d.subject.empty() || d.relation.empty() || d.value.empty()) continue;
      facts.push_back(make_fact(sid, d, sources, now));
      if (first_fact.empty()) first_fact = facts.back().id;
    }
    for (const auto* e : members) {
      if (!e->promoted) promotions.push_back({e->id, first_fact, now});
    }
  }

  const auto before = store.semantic_snapshot()->size();
  if (!facts.empty()) store.append_facts(std::move(facts));
  report.facts_emitted = store.semantic_snapshot()->size() - before;
  store.record_promotions(promotions);
  report.entries_promoted = promotions.size();
  report.duration_micros = std::chrono::duration_cast<std::chrono::microseconds>(
                               std::chrono::steady_clock::now() - started)
                               .count();
  return report;
}

/// Runs a pass function at a fixed interval on a background thread. The first
/// pass starts immediately. A tick that arrives while a pass is still running
/// is skipped and counted; passes never overlap.
class ConsolidationDaemon {
 public:
  ConsolidationDaemon(std::chrono::milliseconds interval, std::function<void()> pass)
      : interval_(interval), pass_(std::move(pass)) {
    if (interval_.count() <= 0) throw ValidationError("daemon interval must be positive");
    worker_ = std::thread([this] { work(); });
    ticker_ = std::thread([this] { tick(); });
  }

  ConsolidationDaemon(const ConsolidationDaemon&) = delete;
  ConsolidationDaemon& operator=(const ConsolidationDaemon&) = delete;

  ~ConsolidationDaemon() { stop(); }

  /// Blocks until a running pass finishes; no pass starts afterwards.
  void stop() {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      stopping_ = true;
      pending_ = false;
    }
    cv_.notify_all();
    if (ticker_.joinable()) ticker_.join();
    if (worker_.joinable()) worker_.join();
  }

  std::size_t passes_run() const { return passes_.load(); }
  std::size_t passes_skipped() const { return skipped_.load(); }
  std::size_t passes_failed() const { return failed_.load(); }

 private:
  void tick() {
    auto next = std::chrono::steady_clock::now();
    std::unique_lock lock(mutex_);
    while (!stopping_) {
      if (cv_.wait_until(lock, next, [this] { return stopping_; })) break;
      if (running_ || pending_) {
        ++skipped_;
      } else {
        pending_ = true;
        cv_.notify_all();
      }
      next += interval_;
    }
  }

  void work() {
    std::unique_lock lock(mutex_);
    while (true) {
      cv_.wait(lock, [this] { return stopping_ || pending_; });
      if (stopping_) return;
      pending_ = false;
      running_ = true;
      lock.unlock();
      try {
        pass_();
      } catch (...) {
        ++failed_;
      }
      ++passes_;
      lock.lock();
      running_ = false;
    }
  }

  std::chrono::milliseconds interval_;
  std::function<void()> pass_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool stopping_ = false;
  bool pending_ = false;
  bool running_ = false;
  std::atomic<std::size_t> passes_{0};
  std::atomic<std::size_t> skipped_{0};
  std::atomic<std::size_t> failed_{0};
  std::thread worker_;
  std::thread ticker_;
};

}  // namespace memtier
