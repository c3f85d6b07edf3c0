#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memtier/attribution.hpp"
#include "memtier/consolidation.hpp"
#include "memtier/errors.hpp"
#include "memtier/lexical.hpp"
#include "memtier/retrieval.hpp"
#include "memtier/store.hpp"
#include "memtier/time.hpp"

namespace memtier {

inline const std::vector<std::string>& question_types() {
  static const std::vector<std::string> kTypes = {
      "single-session-user", "single-session-assistant", "knowledge-update",
      "temporal-reasoning",  "multi-session",            "single-session-preference"};
  return kTypes;
}

struct Turn {
  std::string role;
  std::string content;
};

struct HaystackSession {
  std::string session_id;
  std::string date;  // as written in the dataset
  Timestamp timestamp{};
  std::vector<Turn> turns;

  std::string text() const {
    std::string out;
    for (const auto& t : turns) {
      if (!out.empty()) out += '\n';
      out += t.content;
    }
    return out;
  }
};

struct BenchmarkQuestion {
  std::string question_id;
  std::string question_type;
  std::string question;
  std::string answer;
  std::optional<Timestamp> question_date;
  std::vector<HaystackSession> sessions;
  std::vector<std::string> gold_session_ids;
  std::vector<std::string> gold_facts;  // optional, used only by oracle context
};

namespace detail {

inline std::string scalar_to_string(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  return j.dump();
}

}  // namespace detail

/// One question object in the public long-memory benchmark shape:
/// question_id, question_type, question, answer, haystack_sessions,
/// haystack_dates, answer_session_ids; optional haystack_session_ids,
/// question_date and gold_facts.
inline BenchmarkQuestion question_from_json(const nlohmann::json& j) {
  try {
    BenchmarkQuestion q;
    q.question_id = detail::scalar_to_string(j.at("question_id"));
    q.question_type = j.at("question_type").get<std::string>();
    q.question = j.at("question").get<std::string>();
    q.answer = detail::scalar_to_string(j.at("answer"));
    if (j.contains("question_date") && j["question_date"].is_string()) {
      q.question_date = parse_dataset_date(j["question_date"].get<std::string>());
    }
    const auto& sessions = j.at("haystack_sessions");
    const auto& dates = j.at("haystack_dates");
    if (dates.size() != sessions.size()) throw ValidationError("haystack_dates and haystack_sessions differ in length");
    const nlohmann::json* ids = j.contains("haystack_session_ids") ? &j["haystack_session_ids"] : nullptr;
    if (ids && ids->size() != sessions.size()) throw ValidationError("haystack_session_ids length mismatch");
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      HaystackSession s;
      s.session_id = ids ? detail::scalar_to_string((*ids)[i]) : "session_" + std::to_string(i);
      s.date = dates[i].get<std::string>();
      s.timestamp = parse_dataset_date(s.date);
      for (const auto& t : sessions[i]) s.turns.push_back({t.value("role", std::string{"user"}), t.at("content").get<std::string>()});
      q.sessions.push_back(std::move(s));
    }
    for (const auto& g : j.at("answer_session_ids")) q.gold_session_ids.push_back(detail::scalar_to_string(g));
    if (j.contains("gold_facts")) {
      for (const auto& f : j["gold_facts"]) q.gold_facts.push_back(f.get<std::string>());
    }
    std::set<std::string> haystack;
    for (const auto& s : q.sessions) haystack.insert(s.session_id);
    for (const auto& g : q.gold_session_ids) {
      if (haystack.count(g) == 0) {
        throw ValidationError("question " + q.question_id + ": gold session '" + g + "' not in haystack");
      }
    }
    return q;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("bad benchmark question: ") + ex.what());
  }
}

/// Reads either a JSON array of questions or one question object per line.
inline std::vector<BenchmarkQuestion> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read dataset: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const auto text = buffer.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  std::vector<BenchmarkQuestion> out;
  try {
    if (first != std::string::npos && text[first] == '[') {
      for (const auto& j : nlohmann::json::parse(text)) out.push_back(question_from_json(j));
      return out;
    }
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.push_back(question_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::parse_error& ex) {
    throw ValidationError("dataset parse error in " + path.string() + ": " + ex.what());
  }
  return out;
}

/// A question's haystack as a memory corpus.
struct QuestionCorpus {
  std::vector<EpisodicEntry> entries;
  std::vector<SemanticFact> facts;
  Timestamp as_of{};
  std::size_t extraction_failures = 0;

  CorpusView view() const { return {entries, facts}; }
};

inline std::string turn_entry_id(std::string_view session_id, std::size_t turn) {
  return std::string(session_id) + "#" + std::to_string(turn);
}

/// One episodic entry per turn (timestamped at session date + turn seconds).
/// When an extractor is given, the semantic tier is pre-populated from the
/// session transcripts alone. Entry CWs are seeded from `cw` when given.
inline QuestionCorpus build_question_corpus(const BenchmarkQuestion& q, Extractor* extractor,
                                            const InMemoryCwLedger* cw = nullptr) {
  QuestionCorpus corpus;
  Timestamp latest{};
  for (const auto& s : q.sessions) {
    std::set<std::string> ids;
    for (std::size_t t = 0; t < s.turns.size(); ++t) {
      EpisodicEntry e;
      e.id = turn_entry_id(s.session_id, t);
      e.timestamp = s.timestamp + std::chrono::seconds(static_cast<long long>(t));
      e.session_id = s.session_id;
      e.agent_id = s.turns[t].role;
      e.project = "benchmark";
      e.content = s.turns[t].content;
      e.tokens = whitespace_token_count(e.content);
      e.system = is_system_content(e.content);
      e.cognitive_weight = cw ? cw->cognitive_weight(e.id) : 0.0;
      latest = std::max(latest, e.timestamp);
      ids.insert(e.id);
      corpus.entries.push_back(std::move(e));
    }
    if (extractor == nullptr) continue;
    try {
      std::set<std::string> seen;
      for (const auto& d : extractor->extract(s.session_id, s.text())) {
        if (d.subject.empty() || d.relation.empty() || d.value.empty()) continue;
        auto f = make_fact(s.session_id, d, ids, s.timestamp);
        if (seen.insert(f.id).second) corpus.facts.push_back(std::move(f));
      }
    } catch (const ExternalServiceError&) {
      throw;
    } catch (const std::exception&) {
      ++corpus.extraction_failures;
    }
  }
  corpus.as_of = q.question_date.value_or(latest);
  return corpus;
}

}  // namespace memtier
