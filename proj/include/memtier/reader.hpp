#pragma once

#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>

#include "memtier/dataset.hpp"

namespace memtier {

struct ReaderRequest {
  std::string_view question_id;
  std::string_view question;
  std::string_view context;
};

/// Answers a question from injected context.
class Reader {
 public:
  virtual ~Reader() = default;
  virtual std::string answer(const ReaderRequest& request) = 0;
};

inline constexpr std::string_view kReaderPromptTemplate =
    "Use the memory context to answer the question in a few words.\n\n"
    "Context:\n{context}\n\nQuestion: {question}\nAnswer:";

inline std::string reader_prompt(std::string_view question, std::string_view context) {
  std::string out(kReaderPromptTemplate);
  const auto put = [&out](std::string_view key, std::string_view value) {
    const auto pos = out.find(key);
    out.replace(pos, key.size(), value);
  };
  put("{context}", context);
  put("{question}", question);
  return out;
}

/// Keeps at most `max_tokens` whitespace-separated tokens.
inline std::string truncate_answer(std::string_view text, std::size_t max_tokens = 30) {
  std::istringstream words{std::string(text)};
  std::string w, out;
  for (std::size_t n = 0; n < max_tokens && (words >> w); ++n) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

/// Returns the gold answer when it appears verbatim in the context, else "".
class OracleReader final : public Reader {
 public:
  explicit OracleReader(std::span<const BenchmarkQuestion> questions) {
    for (const auto& q : questions) gold_.emplace(q.question_id, q.answer);
  }

  std::string answer(const ReaderRequest& r) override {
    const auto it = gold_.find(std::string(r.question_id));
    if (it == gold_.end()) return {};
    return r.context.find(it->second) != std::string_view::npos ? it->second : std::string{};
  }

 private:
  std::unordered_map<std::string, std::string> gold_;
};

/// Returns the first packed line of the context.
class EchoReader final : public Reader {
 public:
  std::string answer(const ReaderRequest& r) override {
    return std::string(r.context.substr(0, r.context.find('\n')));
  }
};

}  // namespace memtier
