#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "memtier/attribution.hpp"
#include "memtier/errors.hpp"
#include "memtier/learning.hpp"
#include "memtier/retrieval.hpp"
#include "memtier/scoring.hpp"

namespace memtier {

using ojson = nlohmann::ordered_json;

inline ojson to_json(const WeightVector& w) {
  return ojson{{"sem", w.sem}, {"bm25", w.bm25}, {"decay", w.decay}, {"cw", w.cw}, {"tier", w.tier}};
}

inline ojson to_json(const DecayConfig& d) {
  return ojson{{"lambda", d.lambda}, {"bypass_threshold", d.bypass_threshold}};
}

inline ojson to_json(const TierConfig& t) {
  return ojson{{"episodic", t.episodic}, {"semantic", t.semantic}, {"procedural", t.procedural}};
}

inline ojson k1_to_json(const std::optional<std::size_t>& k1) {
  return k1 ? ojson(*k1) : ojson("inf");
}

inline ojson to_json(const RetrievalConfig& c) {
  return ojson{{"k1", k1_to_json(c.stage1_k1)},
               {"k", c.stage2_k},
               {"budget", c.token_budget},
               {"weights", to_json(c.weights)},
               {"variant", to_string(c.variant)},
               {"mode", to_string(c.mode)},
               {"rrf_k", c.rrf_k},
               {"decay", to_json(c.decay)},
               {"tier", to_json(c.tiers)},
               {"bm25", {{"k1", c.bm25.k1}, {"b", c.bm25.b}}},
               {"include_facts", c.include_facts},
               {"prepend_timestamps", c.prepend_timestamps}};
}

inline ojson to_json(const AttributionConfig& a) { return ojson{{"alpha", a.alpha}}; }

inline ojson to_json(const TrainConfig& t) {
  return ojson{{"epochs", t.epochs},
               {"batch_size", t.batch_size},
               {"clip_epsilon", t.clip_epsilon},
               {"step_size", t.step_size},
               {"question_count", t.question_count}};
}

/// "inf", "none" or "unbounded" disable stage-1 scoping; otherwise a positive integer.
inline std::optional<std::size_t> parse_k1(std::string_view s) {
  if (s == "inf" || s == "none" || s == "unbounded") return std::nullopt;
  std::size_t value = 0;
  std::size_t used = 0;
  try {
    value = std::stoul(std::string(s), &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || value == 0) {
    throw ValidationError("k1 must be a positive integer or 'inf', got '" + std::string(s) + "'");
  }
  return value;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::string_view where,
                           std::initializer_list<std::string_view> known) {
  if (!j.is_object()) throw ValidationError("config: '" + std::string(where) + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const auto k : known) ok = ok || key == k;
    if (!ok) throw ValidationError("config: unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline WeightVector weights_from_json(const nlohmann::json& j) {
  WeightVector w;
  if (j.is_array()) {
    if (j.size() != 5) throw ValidationError("config: weights array needs 5 values");
    w = WeightVector::from_array(j.get<std::array<double, 5>>());
  } else {
    detail::reject_unknown(j, "weights", {"sem", "bm25", "decay", "cw", "tier"});
    detail::read_if(j, "sem", w.sem);
    detail::read_if(j, "bm25", w.bm25);
    detail::read_if(j, "decay", w.decay);
    detail::read_if(j, "cw", w.cw);
    detail::read_if(j, "tier", w.tier);
  }
  w.validate();
  return w;
}

/// Everything a CLI run needs; defaults are the engine defaults.
struct EngineConfig {
  std::filesystem::path workspace = ".memtier";
  RetrievalConfig retrieval;  // carries weights, decay and tier settings
  AttributionConfig attribution;
  TrainConfig train;
  double policy_sigma = 0.15;
  std::string reader_url;
  std::string reader_kind = "auto";  // auto | oracle | echo | http; auto picks http when a url is set
  std::string embedder_url;
  std::size_t embedder_dimension = 384;
  std::string extractor_url;
  std::size_t consolidation_interval_seconds = 300;
  std::uint64_t seed = 42;

  void validate() const {
    retrieval.validate();
    attribution.validate();
    train.validate();
    if (!(policy_sigma >= 0.0)) throw ValidationError("config: policy sigma must be >= 0");
    if (reader_kind != "auto" && reader_kind != "oracle" && reader_kind != "echo" && reader_kind != "http") {
      throw ValidationError("config: unknown reader kind '" + reader_kind + "' (auto | oracle | echo | http)");
    }
    if (embedder_dimension == 0) throw ValidationError("config: embedder dimension must be positive");
    if (consolidation_interval_seconds == 0) throw ValidationError("config: consolidation interval must be positive");
  }

  ojson to_json() const {
    return ojson{{"workspace", workspace.string()},
                 {"retrieval", memtier::to_json(retrieval)},
                 {"attribution", memtier::to_json(attribution)},
                 {"train", [&] {
                    auto t = memtier::to_json(train);
                    t["sigma"] = policy_sigma;
                    return t;
                  }()},
                 {"reader", {{"url", reader_url}, {"kind", reader_kind}}},
                 {"embedder", {{"url", embedder_url}, {"dimension", embedder_dimension}}},
                 {"extractor", {{"url", extractor_url}}},
                 {"consolidation", {{"interval_seconds", consolidation_interval_seconds}}},
                 {"seed", seed}};
  }
};

/// Unknown keys are errors. weights, decay and tier may sit at the top level
/// or inside "retrieval", so an echoed config loads back unchanged.
inline EngineConfig engine_config_from_json(const nlohmann::json& j) {
  EngineConfig c;
  try {
    detail::reject_unknown(j, "config", {"workspace", "weights", "decay", "tier", "retrieval", "attribution",
                                         "train", "reader", "embedder", "extractor", "consolidation", "seed"});
    if (j.contains("workspace")) c.workspace = j["workspace"].get<std::string>();
    const auto read_shared = [&c](const nlohmann::json& block) {
      if (block.contains("weights")) c.retrieval.weights = weights_from_json(block["weights"]);
      if (block.contains("decay")) {
        const auto& d = block["decay"];
        detail::reject_unknown(d, "decay", {"lambda", "bypass_threshold"});
        detail::read_if(d, "lambda", c.retrieval.decay.lambda);
        detail::read_if(d, "bypass_threshold", c.retrieval.decay.bypass_threshold);
      }
      if (block.contains("tier")) {
        const auto& t = block["tier"];
        detail::reject_unknown(t, "tier", {"episodic", "semantic", "procedural"});
        detail::read_if(t, "episodic", c.retrieval.tiers.episodic);
        detail::read_if(t, "semantic", c.retrieval.tiers.semantic);
        detail::read_if(t, "procedural", c.retrieval.tiers.procedural);
      }
    };
    read_shared(j);
    if (j.contains("retrieval")) {
      const auto& r = j["retrieval"];
      detail::reject_unknown(r, "retrieval", {"k1", "k", "budget", "variant", "mode", "rrf_k", "bm25",
                                              "include_facts", "prepend_timestamps", "weights", "decay", "tier"});
      read_shared(r);
      if (r.contains("k1")) {
        c.retrieval.stage1_k1 = r["k1"].is_string() ? parse_k1(r["k1"].get<std::string>())
                                                    : std::optional<std::size_t>(r["k1"].get<std::size_t>());
      }
      detail::read_if(r, "k", c.retrieval.stage2_k);
      detail::read_if(r, "budget", c.retrieval.token_budget);
      if (r.contains("variant")) c.retrieval.variant = parse_normalisation(r["variant"].get<std::string>());
      if (r.contains("mode")) c.retrieval.mode = parse_retrieval_mode(r["mode"].get<std::string>());
      detail::read_if(r, "rrf_k", c.retrieval.rrf_k);
      if (r.contains("bm25")) {
        detail::reject_unknown(r["bm25"], "retrieval.bm25", {"k1", "b"});
        detail::read_if(r["bm25"], "k1", c.retrieval.bm25.k1);
        detail::read_if(r["bm25"], "b", c.retrieval.bm25.b);
      }
      detail::read_if(r, "include_facts", c.retrieval.include_facts);
      detail::read_if(r, "prepend_timestamps", c.retrieval.prepend_timestamps);
    }
    if (j.contains("attribution")) {
      detail::reject_unknown(j["attribution"], "attribution", {"alpha"});
      detail::read_if(j["attribution"], "alpha", c.attribution.alpha);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      detail::reject_unknown(t, "train", {"epochs", "batch_size", "clip_epsilon", "step_size",
                                          "question_count", "sigma"});
      detail::read_if(t, "epochs", c.train.epochs);
      detail::read_if(t, "batch_size", c.train.batch_size);
      detail::read_if(t, "clip_epsilon", c.train.clip_epsilon);
      detail::read_if(t, "step_size", c.train.step_size);
      detail::read_if(t, "question_count", c.train.question_count);
      detail::read_if(t, "sigma", c.policy_sigma);
    }
    if (j.contains("reader")) {
      detail::reject_unknown(j["reader"], "reader", {"url", "kind"});
      detail::read_if(j["reader"], "url", c.reader_url);
      detail::read_if(j["reader"], "kind", c.reader_kind);
    }
    if (j.contains("extractor")) {
      detail::reject_unknown(j["extractor"], "extractor", {"url"});
      detail::read_if(j["extractor"], "url", c.extractor_url);
    }
    if (j.contains("embedder")) {
      detail::reject_unknown(j["embedder"], "embedder", {"url", "dimension"});
      detail::read_if(j["embedder"], "url", c.embedder_url);
      detail::read_if(j["embedder"], "dimension", c.embedder_dimension);
    }
    if (j.contains("consolidation")) {
      detail::reject_unknown(j["consolidation"], "consolidation", {"interval_seconds"});
      detail::read_if(j["consolidation"], "interval_seconds", c.consolidation_interval_seconds);
    }
    detail::read_if(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline EngineConfig load_engine_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config: " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return engine_config_from_json(nlohmann::json::parse(buffer.str()));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ValidationError("config parse error in " + path.string() + ": " + ex.what());
  }
}

}  // namespace memtier
