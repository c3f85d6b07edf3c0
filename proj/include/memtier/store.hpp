#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "memtier/errors.hpp"
#include "memtier/lexical.hpp"
#include "memtier/scoring.hpp"
#include "memtier/time.hpp"

namespace memtier {

inline constexpr std::string_view kSystemPrefix = "[system]";

struct EpisodicEntry {
  std::string id;
  Timestamp timestamp{};
  std::string session_id;
  std::string agent_id;
  std::string project;
  std::string content;
  std::uint32_t tokens = 0;
  bool promoted = false;
  double cognitive_weight = 0.0;
  bool system = false;  // derived from the content prefix on load; never serialised

  bool operator==(const EpisodicEntry&) const = default;
};

struct SemanticFact {
  std::string id;
  std::string subject;
  std::string relation;
  std::string value;
  std::set<std::string> session_ids;
  std::set<std::string> source_entry_ids;
  Timestamp created_at{};

  /// The text the semantic BM25 index sees.
  std::string searchable_text() const { return subject + " " + relation + " " + value; }

  bool operator==(const SemanticFact&) const = default;
};

struct CwLedgerRecord {
  std::string entry_id;
  double delta = 0.0;
  double reward = 0.0;
  Timestamp applied_at{};
};

struct PromotionRecord {
  std::string entry_id;
  std::string fact_id;  // empty when the session yielded no facts
  Timestamp promoted_at{};
};

inline bool is_system_content(std::string_view content) {
  return content.substr(0, kSystemPrefix.size()) == kSystemPrefix;
}

// ---- JSON ---------------------------------------------------------------

inline std::string to_jsonl_line(const EpisodicEntry& e) {
  // Field order is part of the on-disk format.
  nlohmann::ordered_json j;
  j["id"] = e.id;
  j["timestamp"] = format_timestamp(e.timestamp);
  j["session_id"] = e.session_id;
  j["agent_id"] = e.agent_id;
  j["project"] = e.project;
  j["content"] = e.content;
  j["tokens"] = e.tokens;
  j["promoted"] = e.promoted;
  j["cognitive_weight"] = e.cognitive_weight;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

/// Throws ValidationError on missing fields, bad types or a malformed timestamp.
inline EpisodicEntry entry_from_json(const nlohmann::json& j) {
  try {
    EpisodicEntry e;
    e.id = j.at("id").get<std::string>();
    e.timestamp = parse_timestamp(j.at("timestamp").get<std::string>());
    e.session_id = j.at("session_id").get<std::string>();
    e.agent_id = j.value("agent_id", std::string{});
    e.project = j.at("project").get<std::string>();
    e.content = j.at("content").get<std::string>();
    e.tokens = j.contains("tokens") ? j.at("tokens").get<std::uint32_t>()
                                    : whitespace_token_count(e.content);
    e.promoted = j.value("promoted", false);
    e.cognitive_weight = j.value("cognitive_weight", 0.0);
    e.system = is_system_content(e.content);
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad episodic entry: ") + ex.what());
  }
}

inline std::string to_jsonl_line(const SemanticFact& f) {
  nlohmann::ordered_json j;
  j["id"] = f.id;
  j["subject"] = f.subject;
  j["relation"] = f.relation;
  j["value"] = f.value;
  j["session_ids"] = f.session_ids;
  j["source_entry_ids"] = f.source_entry_ids;
  j["created_at"] = format_timestamp(f.created_at);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline SemanticFact fact_from_json(const nlohmann::json& j) {
  try {
    SemanticFact f;
    f.id = j.at("id").get<std::string>();
    f.subject = j.at("subject").get<std::string>();
    f.relation = j.at("relation").get<std::string>();
    f.value = j.at("value").get<std::string>();
    for (const auto& s : j.at("session_ids")) f.session_ids.insert(s.get<std::string>());
    if (j.contains("source_entry_ids")) {
      for (const auto& s : j.at("source_entry_ids")) f.source_entry_ids.insert(s.get<std::string>());
    }
    f.created_at = parse_timestamp(j.at("created_at").get<std::string>());
    return f;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad semantic fact: ") + ex.what());
  }
}

inline std::string to_jsonl_line(const CwLedgerRecord& r) {
  nlohmann::ordered_json j;
  j["entry_id"] = r.entry_id;
  j["delta"] = r.delta;
  j["reward"] = r.reward;
  j["applied_at"] = format_timestamp(r.applied_at);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline CwLedgerRecord ledger_from_json(const nlohmann::json& j) {
  try {
    return {j.at("entry_id").get<std::string>(), j.at("delta").get<double>(),
            j.at("reward").get<double>(), parse_timestamp(j.at("applied_at").get<std::string>())};
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad ledger record: ") + ex.what());
  }
}

inline std::string to_jsonl_line(const PromotionRecord& r) {
  nlohmann::ordered_json j;
  j["entry_id"] = r.entry_id;
  j["fact_id"] = r.fact_id;
  j["promoted_at"] = format_timestamp(r.promoted_at);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline PromotionRecord promotion_from_json(const nlohmann::json& j) {
  try {
    return {j.at("entry_id").get<std::string>(), j.value("fact_id", std::string{}),
            parse_timestamp(j.at("promoted_at").get<std::string>())};
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad promotion record: ") + ex.what());
  }
}

// ---- helpers ------------------------------------------------------------

inline double clip_cw(double cw) { return std::clamp(cw, -1.0, 1.0); }

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

/// FNV-1a over a sequence of fields separated by a unit separator.
inline std::uint64_t fnv1a(std::initializer_list<std::string_view> fields) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto field : fields) {
    for (const char c : field) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= 0x1F;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

/// Calls `fn` with each parsed line; returns the number of lines skipped as corrupt.
template <typename Fn>
std::size_t read_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::size_t skipped = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    try {
      fn(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      ++skipped;
    } catch (const ValidationError&) {
      ++skipped;
    }
  }
  return skipped;
}

inline void append_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw StorageError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::string buffer;
  for (const auto& l : lines) {
    buffer += l;
    buffer += '\n';
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw StorageError("cannot open for append: " + path.string());
  out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
  out.flush();
  if (!out) throw StorageError("write failed: " + path.string());
}

inline std::vector<std::filesystem::path> episodic_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) return files;
  for (const auto& item : std::filesystem::directory_iterator(dir, ec)) {
    if (item.is_regular_file() && item.path().extension() == ".jsonl") files.push_back(item.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace detail

/// Which entries a reader may see: one agent's private log, or everything.
struct AgentView {
  bool orchestrator = false;
  std::string agent_id;

  static AgentView of(std::string agent) { return {false, std::move(agent)}; }
  static AgentView global() { return {true, {}}; }

  bool allows(const EpisodicEntry& e) const { return orchestrator || e.agent_id == agent_id; }
};

struct LoadResult {
  std::vector<EpisodicEntry> entries;
  std::size_t skipped_lines = 0;
};

struct FactLoadResult {
  std::vector<SemanticFact> facts;
  std::size_t skipped_lines = 0;
};

using FactSnapshot = std::shared_ptr<const std::vector<SemanticFact>>;

/// Workspace-rooted episodic and semantic tiers.
///
/// Layout under the workspace:
///   memory/episodic/YYYY-MM-DD.jsonl   one file per UTC day of the entry timestamp
///   memory/semantic/facts.jsonl
///   memory/cw_ledger.jsonl             cognitive-weight deltas, replayed on load
///   memory/promotions.jsonl            promotion marks, replayed on load
///
/// Files are only ever appended to. One writer per workspace; any number of
/// concurrent readers. Loads never write.
class MemoryStore {
 public:
  explicit MemoryStore(std::filesystem::path workspace) : root_(std::move(workspace)) {
    for (const auto& file : detail::episodic_files(episodic_dir())) {
      detail::read_jsonl(file, [&](const nlohmann::json& j) {
        const auto e = entry_from_json(j);
        cw_.emplace(e.id, e.cognitive_weight);
      });
    }
    detail::read_jsonl(ledger_path(), [&](const nlohmann::json& j) {
      const auto r = ledger_from_json(j);
      if (auto it = cw_.find(r.entry_id); it != cw_.end()) it->second = clip_cw(it->second + r.delta);
    });
    detail::read_jsonl(promotions_path(), [&](const nlohmann::json& j) {
      promoted_.insert(promotion_from_json(j).entry_id);
    });
    auto facts = load_facts().facts;
    for (const auto& f : facts) fact_ids_.insert(f.id);
    facts_ = std::make_shared<const std::vector<SemanticFact>>(std::move(facts));
  }

  const std::filesystem::path& workspace() const { return root_; }
  std::filesystem::path episodic_dir() const { return root_ / "memory" / "episodic"; }
  std::filesystem::path facts_path() const { return root_ / "memory" / "semantic" / "facts.jsonl"; }
  std::filesystem::path ledger_path() const { return root_ / "memory" / "cw_ledger.jsonl"; }
  std::filesystem::path promotions_path() const { return root_ / "memory" / "promotions.jsonl"; }
  std::filesystem::path day_file(Timestamp ts) const {
    return episodic_dir() / (day_key(ts) + ".jsonl");
  }

  /// Appends one entry to its daily file. An empty id is filled with a
  /// content hash; `tokens` is always recomputed from the content.
  std::string append_entry(EpisodicEntry entry) {
    if (entry.project.empty()) throw ValidationError("entry project must be non-empty");
    if (!(entry.cognitive_weight >= -1.0 && entry.cognitive_weight <= 1.0)) {
      throw ValidationError("cognitive_weight outside [-1, 1]");
    }
    entry.tokens = whitespace_token_count(entry.content);
    entry.system = is_system_content(entry.content);
    entry.promoted = false;

    std::lock_guard lock(write_mutex_);
    if (entry.id.empty()) {
      const auto base = "e-" + hex64(fnv1a({entry.project, entry.session_id, entry.agent_id,
                                            format_timestamp(entry.timestamp), entry.content}));
      entry.id = base;
      for (int n = 2; cw_.count(entry.id) != 0; ++n) entry.id = base + "-" + std::to_string(n);
    } else if (cw_.count(entry.id) != 0) {
      throw ValidationError("duplicate entry id: '" + entry.id + "'");
    }
    detail::append_lines(day_file(entry.timestamp), {to_jsonl_line(entry)});
    cw_.emplace(entry.id, entry.cognitive_weight);
    return entry.id;
  }

  /// Entries of `project`, optionally restricted to `session_scope`, filtered by
  /// the agent view. CW and promoted flags reflect the sidecar ledgers.
  LoadResult load_entries(std::string_view project,
                          const std::optional<SessionSet>& session_scope = std::nullopt,
                          const AgentView& view = AgentView::global()) const {
    std::vector<CwLedgerRecord> ledger;
    detail::read_jsonl(ledger_path(), [&](const nlohmann::json& j) { ledger.push_back(ledger_from_json(j)); });
    std::unordered_set<std::string> promoted;
    detail::read_jsonl(promotions_path(), [&](const nlohmann::json& j) {
      promoted.insert(promotion_from_json(j).entry_id);
    });

    LoadResult result;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& file : detail::episodic_files(episodic_dir())) {
      result.skipped_lines += detail::read_jsonl(file, [&](const nlohmann::json& j) {
        auto e = entry_from_json(j);
        if (e.project != project) return;
        if (session_scope && session_scope->find(e.session_id) == session_scope->end()) return;
        if (!view.allows(e)) return;
        e.promoted = promoted.count(e.id) != 0;
        index.emplace(e.id, result.entries.size());
        result.entries.push_back(std::move(e));
      });
    }
    for (const auto& r : ledger) {
      if (auto it = index.find(r.entry_id); it != index.end()) {
        auto& cw = result.entries[it->second].cognitive_weight;
        cw = clip_cw(cw + r.delta);
      }
    }
    return result;
  }

  /// Appends a fact; an id already present is a no-op. Returns the fact id.
  std::string append_fact(SemanticFact fact) {
    auto ids = append_facts({std::move(fact)});
    return ids.front();
  }

  /// Appends a batch with one write and publishes one new snapshot, so
  /// in-process readers see the batch entirely or not at all.
  std::vector<std::string> append_facts(std::vector<SemanticFact> facts) {
    for (const auto& f : facts) {
      if (f.session_ids.empty()) throw ValidationError("fact '" + f.id + "' has no session ids");
      if (f.id.empty()) throw ValidationError("fact id must be non-empty");
    }
    std::lock_guard lock(write_mutex_);
    std::vector<std::string> ids;
    std::vector<std::string> lines;
    std::vector<SemanticFact> fresh;
    for (auto& f : facts) {
      ids.push_back(f.id);
      if (!fact_ids_.insert(f.id).second) continue;
      lines.push_back(to_jsonl_line(f));
      fresh.push_back(std::move(f));
    }
    if (lines.empty()) return ids;
    detail::append_lines(facts_path(), lines);
    auto next = std::make_shared<std::vector<SemanticFact>>(*semantic_snapshot());
    next->insert(next->end(), std::make_move_iterator(fresh.begin()),
                 std::make_move_iterator(fresh.end()));
    std::lock_guard snap(snapshot_mutex_);
    facts_ = std::move(next);
    return ids;
  }

  FactLoadResult load_facts() const {
    FactLoadResult result;
    result.skipped_lines = detail::read_jsonl(facts_path(), [&](const nlohmann::json& j) {
      result.facts.push_back(fact_from_json(j));
    });
    return result;
  }

  /// The semantic tier as last published by this process.
  FactSnapshot semantic_snapshot() const {
    std::lock_guard snap(snapshot_mutex_);
    return facts_;
  }

  /// CW <- clip(CW + delta, -1, 1), recorded in the ledger.
  double apply_cw_delta(const std::string& entry_id, double delta, double reward,
                        Timestamp applied_at = now_utc()) {
    std::lock_guard lock(write_mutex_);
    const auto it = cw_.find(entry_id);
    if (it == cw_.end()) throw NotFoundError("unknown entry id: '" + entry_id + "'");
    detail::append_lines(ledger_path(), {to_jsonl_line(CwLedgerRecord{entry_id, delta, reward, applied_at})});
    it->second = clip_cw(it->second + delta);
    return it->second;
  }

  double cognitive_weight(const std::string& entry_id) const {
    std::lock_guard lock(write_mutex_);
    const auto it = cw_.find(entry_id);
    if (it == cw_.end()) throw NotFoundError("unknown entry id: '" + entry_id + "'");
    return it->second;
  }

  bool contains(const std::string& entry_id) const {
    std::lock_guard lock(write_mutex_);
    return cw_.count(entry_id) != 0;
  }

  void record_promotions(const std::vector<PromotionRecord>& records) {
    if (records.empty()) return;
    std::lock_guard lock(write_mutex_);
    std::vector<std::string> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(to_jsonl_line(r));
    detail::append_lines(promotions_path(), lines);
    for (const auto& r : records) promoted_.insert(r.entry_id);
  }

  bool is_promoted(const std::string& entry_id) const {
    std::lock_guard lock(write_mutex_);
    return promoted_.count(entry_id) != 0;
  }

 private:
  std::filesystem::path root_;
  mutable std::mutex write_mutex_;
  mutable std::mutex snapshot_mutex_;
  std::unordered_map<std::string, double> cw_;
  std::unordered_set<std::string> promoted_;
  std::unordered_set<std::string> fact_ids_;
  FactSnapshot facts_;
};

}  // namespace memtier
