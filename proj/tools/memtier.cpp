#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "memtier/http_clients.hpp"
#include "memtier/memtier.hpp"

using namespace memtier;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitExternal = 4;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct GlobalFlags {
  std::string config_path;
  std::string workspace;
  bool pretty = false;
};

/// Retrieval knobs shared by retrieve, eval, ablate and train.
struct RetrievalFlags {
  std::optional<std::size_t> k;
  std::optional<std::string> k1;
  std::optional<std::size_t> budget;
  std::optional<std::string> mode;
  std::optional<std::string> variant;
  std::vector<double> weights;
  bool include_facts = false;
  bool timestamps = false;

  void attach(CLI::App* cmd, const std::string& mode_flag = "--mode") {
    cmd->add_option("--k", k, "Entries kept after stage 2");
    cmd->add_option("--k1", k1, "Stage-1 session cap, or 'inf' to disable scoping");
    cmd->add_option("--budget", budget, "Token budget for the packed context");
    cmd->add_option(mode_flag, mode, "bm25 | dense | hybrid");
    cmd->add_option("--variant", variant, "raw | log1p | minmax | zscore | zscore_equal_fusion");
    cmd->add_option("--weights", weights, "Five weights: sem bm25 decay cw tier")->expected(5);
    cmd->add_flag("--include-facts", include_facts, "Rank semantic facts alongside episodic entries");
    cmd->add_flag("--timestamps", timestamps, "Prefix packed lines with entry timestamps");
  }

  void apply(RetrievalConfig& c) const {
    if (k) c.stage2_k = *k;
    if (k1) c.stage1_k1 = parse_k1(*k1);
    if (budget) c.token_budget = *budget;
    if (mode) c.mode = parse_retrieval_mode(*mode);
    if (variant) c.variant = parse_normalisation(*variant);
    if (!weights.empty()) {
      std::array<double, 5> w{};
      std::copy(weights.begin(), weights.end(), w.begin());
      c.weights = WeightVector::from_array(w);
    }
    if (include_facts) c.include_facts = true;
    if (timestamps) c.prepend_timestamps = true;
    c.validate();
  }
};

EngineConfig load_config(const GlobalFlags& g) {
  EngineConfig c = g.config_path.empty() ? EngineConfig{} : load_engine_config(g.config_path);
  if (!g.workspace.empty()) c.workspace = g.workspace;
  return c;
}

std::string dump(const ojson& j, bool pretty) {
  return j.dump(pretty ? 2 : -1, ' ', false, nlohmann::json::error_handler_t::replace);
}

void emit(const ojson& j, bool pretty) { std::cout << dump(j, pretty) << '\n' << std::flush; }

/// Writes to --out when given, otherwise to stdout.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (path.empty()) return;
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw StorageError("cannot write " + path);
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }
  bool to_file() const { return file_.is_open(); }

 private:
  std::ofstream file_;
};

std::unique_ptr<Embedder> make_embedder(const EngineConfig& c) {
  if (c.retrieval.mode == RetrievalMode::bm25) return nullptr;
  if (!c.embedder_url.empty()) return std::make_unique<HttpEmbedder>(c.embedder_url, c.embedder_dimension);
  return std::make_unique<HashingEmbedder>();
}

std::unique_ptr<Extractor> make_extractor(const EngineConfig& c) {
  if (!c.extractor_url.empty()) return std::make_unique<HttpExtractor>(c.extractor_url);
  return std::make_unique<HeuristicExtractor>();
}

std::unique_ptr<Reader> make_reader(const EngineConfig& c, std::span<const BenchmarkQuestion> questions) {
  const auto& kind = c.reader_kind;
  if (kind == "http" || (kind == "auto" && !c.reader_url.empty())) {
    if (c.reader_url.empty()) throw ValidationError("reader.url is not configured");
    return std::make_unique<HttpReader>(c.reader_url);
  }
  if (kind == "echo") return std::make_unique<EchoReader>();
  if (kind == "oracle" || kind == "auto") return std::make_unique<OracleReader>(questions);
  throw ValidationError("unknown reader '" + kind + "' (auto | oracle | echo | http)");
}

ojson breakdown_json(const ScoreBreakdown& b) {
  return ojson{{"phi_sem", b.phi_sem},
               {"phi_bm25_raw", b.phi_bm25_raw},
               {"phi_bm25", b.phi_bm25},
               {"phi_decay", b.phi_decay},
               {"phi_cw", b.phi_cw},
               {"tier_bonus", b.tier_bonus},
               {"composite", b.composite},
               {"bypass_applied", b.bypass_applied},
               {"bypass_reason", to_string(b.bypass_reason)}};
}

// ---- commands ---------------------------------------------------------------

struct AppendArgs {
  std::string project, session, agent = "default", content, timestamp, outcome;
};

int cmd_append(const GlobalFlags& g, const AppendArgs& a) {
  const auto cfg = load_config(g);
  MemoryStore store(cfg.workspace);
  EpisodicEntry e;
  e.project = a.project;
  e.session_id = a.session;
  e.agent_id = a.agent;
  e.content = a.content;
  e.timestamp = a.timestamp.empty() ? now_utc() : parse_timestamp(a.timestamp);
  const auto id = store.append_entry(e);
  ojson out{{"kind", "appended"}, {"id", id}, {"session_id", a.session}, {"project", a.project},
            {"tokens", whitespace_token_count(a.content)}, {"system", is_system_content(a.content)}};
  if (!a.outcome.empty()) {
    const double reward = outcome_reward(parse_outcome(a.outcome));
    const auto session = store.load_entries(a.project, SessionSet{a.session}).entries;
    ojson updates = ojson::array();
    for (const auto& [eid, cw] : apply_attribution(store, session, a.content, reward, cfg.attribution)) {
      updates.push_back({{"id", eid}, {"cognitive_weight", cw}});
    }
    out["outcome"] = a.outcome;
    out["reward"] = reward;
    out["attribution"] = updates;
  }
  emit(out, g.pretty);
  return 0;
}

struct RetrieveArgs {
  std::string project, query, as_of, agent;
  bool explain = false;
  RetrievalFlags flags;
};

int cmd_retrieve(const GlobalFlags& g, RetrieveArgs& a) {
  auto cfg = load_config(g);
  a.flags.apply(cfg.retrieval);
  const MemoryStore store(cfg.workspace);
  const auto view = a.agent.empty() ? AgentView::global() : AgentView::of(a.agent);
  const auto entries = store.load_entries(a.project, std::nullopt, view).entries;
  const auto facts = store.semantic_snapshot();
  const auto embedder = make_embedder(cfg);
  const RetrievalPipeline pipeline(cfg.retrieval, embedder.get());
  const auto as_of = a.as_of.empty() ? now_utc() : parse_timestamp(a.as_of);
  const auto r = pipeline.retrieve({entries, *facts}, a.query, as_of);

  ojson ranked = ojson::array();
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    const auto& e = r.ranked[i];
    ojson row{{"rank", i + 1},
              {"id", e.entry.id},
              {"session_id", e.entry.session_id},
              {"tier", to_string(e.tier)},
              {"score", e.breakdown.composite},
              {"timestamp", format_timestamp(e.entry.timestamp)},
              {"content", e.entry.content}};
    if (e.dense_similarity) row["dense_similarity"] = *e.dense_similarity;
    if (e.fused_score) row["fused_score"] = *e.fused_score;
    if (a.explain) row["breakdown"] = breakdown_json(e.breakdown);
    ranked.push_back(std::move(row));
  }
  ojson out{{"kind", "retrieval"},
            {"query", a.query},
            {"as_of", format_timestamp(as_of)},
            {"sessions_ratio", r.sessions_ratio()},
            {"total_sessions", r.total_sessions},
            {"scoped_session_ids", r.scoped_session_ids},
            {"scope_fallback", r.scope_fallback},
            {"ranked", ranked},
            {"packed_entry_ids", r.packed_entry_ids},
            {"packed_token_count", r.packed_token_count},
            {"packed_context", r.packed_context},
            {"latency_micros",
             {{"stage1", r.latency.stage1_micros},
              {"stage2", r.latency.stage2_micros},
              {"dense", r.latency.dense_micros},
              {"pack", r.latency.pack_micros},
              {"total", r.latency.total_micros}}},
            {"config", cfg.to_json()}};
  if (g.pretty) {
    char line[64];
    std::snprintf(line, sizeof line, "%.2f", r.sessions_ratio());
    std::cout << "sessions ratio " << line << " (" << r.scoped_session_ids.size() << "/" << r.total_sessions
              << ")\n";
  }
  emit(out, g.pretty);
  return 0;
}

struct ConsolidateArgs {
  std::string project;
  bool daemon = false;
  std::optional<double> interval;
  std::size_t max_passes = 0;
};

ojson report_json(const ConsolidationReport& r) {
  ojson failures = ojson::array();
  for (const auto& f : r.failures) failures.push_back({{"session_id", f.session_id}, {"message", f.message}});
  return ojson{{"kind", "consolidation"},
               {"sessions_scanned", r.sessions_scanned},
               {"facts_emitted", r.facts_emitted},
               {"entries_promoted", r.entries_promoted},
               {"failures", failures},
               {"duration_micros", r.duration_micros}};
}

int cmd_consolidate(const GlobalFlags& g, const ConsolidateArgs& a) {
  const auto cfg = load_config(g);
  MemoryStore store(cfg.workspace);
  const auto extractor = make_extractor(cfg);
  if (!a.daemon) {
    emit(report_json(run_consolidation_pass(store, *extractor, a.project)), g.pretty);
    return 0;
  }
  const double seconds = a.interval.value_or(static_cast<double>(cfg.consolidation_interval_seconds));
  if (!(seconds > 0.0)) throw ValidationError("--interval must be positive");
  std::mutex out_mutex;
  std::atomic<std::size_t> done{0};
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  ConsolidationDaemon daemon(std::chrono::milliseconds(static_cast<long long>(seconds * 1000.0)), [&] {
    if (a.max_passes != 0 && done.load() >= a.max_passes) return;
    const auto report = run_consolidation_pass(store, *extractor, a.project);
    std::lock_guard lock(out_mutex);
    emit(report_json(report), g.pretty);
    ++done;
  });
  while (!g_interrupted && (a.max_passes == 0 || done.load() < a.max_passes)) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  daemon.stop();
  std::lock_guard lock(out_mutex);
  emit(ojson{{"kind", "daemon_stopped"},
             {"passes_run", daemon.passes_run()},
             {"passes_skipped", daemon.passes_skipped()},
             {"passes_failed", daemon.passes_failed()}},
       g.pretty);
  return 0;
}

struct DatasetArgs {
  std::string dataset, out;
  std::optional<std::string> reader;
  bool semantic = false;
  std::optional<std::uint64_t> seed;
  RetrievalFlags flags;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset, "Question file (JSON array or JSONL)")->required();
    cmd->add_option("--out", out, "Write line-delimited JSON here instead of stdout");
    cmd->add_option("--reader", reader, "auto | oracle | echo | http");
    cmd->add_flag("--semantic", semantic, "Pre-populate the semantic tier with the extractor");
    cmd->add_option("--seed", seed, "Random seed");
    flags.attach(cmd, "--retrieval-mode");
  }

  void apply(EngineConfig& cfg) const {
    flags.apply(cfg.retrieval);
    if (seed) cfg.seed = *seed;
    if (reader) cfg.reader_kind = *reader;
    cfg.validate();
  }
};

struct TrainArgs {
  DatasetArgs data;
  std::string reward = "task_success";
  std::optional<std::size_t> epochs, batch, questions;
  std::optional<double> sigma;
};

int cmd_train(const GlobalFlags& g, TrainArgs& a) {
  auto cfg = load_config(g);
  a.data.apply(cfg);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch) cfg.train.batch_size = *a.batch;
  if (a.questions) cfg.train.question_count = *a.questions;
  if (a.sigma) cfg.policy_sigma = *a.sigma;
  cfg.validate();

  const auto questions = load_dataset(a.data.dataset);
  auto reader = make_reader(cfg, questions);
  const auto extractor = a.data.semantic ? make_extractor(cfg) : nullptr;
  const auto embedder = make_embedder(cfg);

  DatasetTrainOptions opts;
  opts.train = cfg.train;
  opts.seed = cfg.seed;
  opts.extractor = extractor.get();
  if (a.reward == "task_success") {
    opts.reward = RewardMode::task_success;
  } else if (a.reward == "cw_proxy") {
    opts.reward = RewardMode::cw_proxy;
  } else {
    throw ValidationError("unknown reward '" + a.reward + "' (task_success | cw_proxy)");
  }
  opts.init.mean = cfg.retrieval.weights;
  opts.init.sigma.fill(cfg.policy_sigma);
  opts.init.validate();

  const auto base = cfg.retrieval;
  const Embedder* emb = embedder.get();
  const PipelineFactory factory = [&base, emb](const WeightVector& w) {
    auto c = base;
    c.weights = w;
    return RetrievalPipeline(c, emb);
  };
  const auto result = train(questions, factory, *reader, opts);

  Sink sink(a.data.out);
  auto& os = sink.stream();
  const bool pretty = g.pretty && !sink.to_file();
  for (const auto& b : result.log) {
    os << dump(ojson{{"kind", "batch"}, {"batch", b.batch}, {"mean_reward", b.mean_reward},
                     {"weights", to_json(b.weights)}},
               pretty)
       << '\n';
  }
  const auto d = result.delta();
  auto config = cfg.to_json();
  config["reward"] = a.reward;
  config["semantic_prepopulation"] = a.data.semantic;
  os << dump(ojson{{"kind", "result"},
                   {"initial", to_json(result.initial.mean)},
                   {"learned", to_json(result.policy.mean)},
                   {"delta", to_json(WeightVector::from_array(d))},
                   {"episodes", result.episodes},
                   {"reader_failures", result.failures},
                   {"config", config}},
             pretty)
     << '\n';
  return 0;
}

struct EvalArgs {
  DatasetArgs data;
  std::string mode = "retrieval";
  bool attribute = false;
  bool latency = false;
};

BenchmarkOptions benchmark_options(const EngineConfig& cfg, const DatasetArgs& d, Extractor* extractor,
                                   const Embedder* embedder) {
  BenchmarkOptions opts;
  opts.retrieval = cfg.retrieval;
  opts.attribution = cfg.attribution;
  opts.extractor = extractor;
  opts.embedder = embedder;
  opts.config_echo = cfg.to_json();
  opts.config_echo["dataset"] = d.dataset;
  return opts;
}

int cmd_eval(const GlobalFlags& g, EvalArgs& a) {
  auto cfg = load_config(g);
  a.data.apply(cfg);
  const auto questions = load_dataset(a.data.dataset);
  auto reader = make_reader(cfg, questions);
  const auto extractor = a.data.semantic ? make_extractor(cfg) : nullptr;
  const auto embedder = make_embedder(cfg);
  auto opts = benchmark_options(cfg, a.data, extractor.get(), embedder.get());
  opts.mode = parse_eval_mode(a.mode);
  opts.attribute_on_eval = a.attribute;
  const auto report = run_benchmark(questions, *reader, opts);

  Sink sink(a.data.out);
  if (g.pretty) std::cout << report.table();
  if (!g.pretty || sink.to_file()) sink.stream() << report.to_jsonl(a.latency);
  if (!report.questions.empty() && report.reader_failures == report.questions.size()) {
    std::cerr << "memtier: every reader call failed\n";
    return kExitExternal;
  }
  return 0;
}

struct AblateArgs {
  DatasetArgs data;
  std::string grid = "default";
  std::vector<std::size_t> ks{2, 4, 8};
  std::vector<std::size_t> budgets{150, 300, 600};
};

int cmd_ablate(const GlobalFlags& g, AblateArgs& a) {
  auto cfg = load_config(g);
  a.data.apply(cfg);
  const auto questions = load_dataset(a.data.dataset);
  auto reader = make_reader(cfg, questions);
  const auto extractor = a.data.semantic ? make_extractor(cfg) : nullptr;

  std::vector<AblationCell> grid;
  if (a.grid == "default") {
    grid = table2_grid(cfg.retrieval);
  } else if (a.grid == "stage1") {
    grid = stage1_grid(cfg.retrieval);
  } else if (a.grid == "normalisation") {
    grid = normalisation_grid(cfg.retrieval);
  } else if (a.grid == "dense") {
    grid = dense_grid(cfg.retrieval);
  } else if (a.grid == "sweep") {
    grid = cartesian_grid(cfg.retrieval, a.ks, a.budgets);
  } else {
    throw ValidationError("unknown grid '" + a.grid + "' (default | stage1 | normalisation | dense | sweep)");
  }
  if (!a.data.semantic) {
    for (auto& cell : grid) cell.semantic = false;
  }
  // Dense cells need an embedder even when the base mode is bm25.
  auto dense_cfg = cfg;
  dense_cfg.retrieval.mode = RetrievalMode::dense;
  const auto embedder = make_embedder(dense_cfg);
  const auto opts = benchmark_options(cfg, a.data, extractor.get(), embedder.get());
  const auto rows = run_ablation(questions, *reader, grid, opts);

  Sink sink(a.data.out);
  auto& os = sink.stream();
  if (g.pretty) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %8s %8s %8s %8s\n", "cell", "acc", "f1", "R@4", "ratio");
    std::cout << line;
    for (const auto& r : rows) {
      std::snprintf(line, sizeof line, "%-28s %8.3f %8.3f %8.3f %8.3f\n", r.cell.label.c_str(), r.report.accuracy,
                    r.report.f1, r.report.recall_at_4, r.report.sessions_ratio);
      std::cout << line;
    }
    if (!sink.to_file()) return 0;
  }
  os << dump(ojson{{"kind", "ablation"}, {"grid", a.grid}, {"cells", rows.size()}, {"config", opts.config_echo}},
             false)
     << '\n';
  for (const auto& r : rows) {
    auto row = r.to_json();
    row["kind"] = "cell";
    os << dump(row, false) << '\n';
  }
  return 0;
}

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::external_service ? kExitExternal : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memtier: tiered agent memory with two-stage retrieval"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--workspace", g.workspace, "Workspace directory (overrides the config)");
  app.add_flag("--pretty", g.pretty, "Human-readable output");

  AppendArgs append;
  auto* c_append = app.add_subcommand("append", "Append one episodic entry");
  c_append->add_option("--project", append.project)->required();
  c_append->add_option("--session", append.session)->required();
  c_append->add_option("--agent", append.agent);
  c_append->add_option("--content", append.content)->required();
  c_append->add_option("--timestamp", append.timestamp, "ISO-8601 UTC; defaults to now");
  c_append->add_option("--outcome", append.outcome, "success | neutral | failure")
      ->check(CLI::IsMember({"success", "neutral", "failure"}));

  RetrieveArgs retrieve;
  auto* c_retrieve = app.add_subcommand("retrieve", "Rank memories for a query");
  c_retrieve->add_option("--project", retrieve.project)->required();
  c_retrieve->add_option("--query", retrieve.query)->required();
  c_retrieve->add_option("--as-of", retrieve.as_of, "Reference time for decay; defaults to now");
  c_retrieve->add_option("--agent", retrieve.agent, "Restrict to one agent's entries");
  c_retrieve->add_flag("--explain", retrieve.explain, "Include the per-signal score breakdown");
  retrieve.flags.attach(c_retrieve);

  ConsolidateArgs consolidate;
  auto* c_consolidate = app.add_subcommand("consolidate", "Promote episodic sessions into semantic facts");
  c_consolidate->add_option("--project", consolidate.project)->required();
  c_consolidate->add_flag("--daemon", consolidate.daemon, "Repeat at the configured interval until interrupted");
  c_consolidate->add_option("--interval", consolidate.interval, "Daemon interval in seconds");
  c_consolidate->add_option("--max-passes", consolidate.max_passes, "Stop the daemon after this many passes");

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Learn retrieval weights with PPO");
  train_args.data.attach(c_train);
  c_train->add_option("--reward", train_args.reward, "task_success | cw_proxy");
  c_train->add_option("--epochs", train_args.epochs);
  c_train->add_option("--batch", train_args.batch);
  c_train->add_option("--questions", train_args.questions, "Stratified question count");
  c_train->add_option("--sigma", train_args.sigma, "Exploration standard deviation");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Run the QA benchmark");
  eval.data.attach(c_eval);
  c_eval->add_option("--mode", eval.mode, "no_retrieval | retrieval | oracle");
  c_eval->add_flag("--attribute", eval.attribute, "Credit packed entries of correct answers");
  c_eval->add_flag("--latency", eval.latency, "Include per-stage latency in traces");

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Run an ablation grid");
  ablate.data.attach(c_ablate);
  c_ablate->add_option("--grid", ablate.grid, "default | stage1 | normalisation | dense | sweep");
  c_ablate->add_option("--ks", ablate.ks, "k values for the sweep grid");
  c_ablate->add_option("--budgets", ablate.budgets, "Budgets for the sweep grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (c_append->parsed()) return cmd_append(g, append);
    if (c_retrieve->parsed()) return cmd_retrieve(g, retrieve);
    if (c_consolidate->parsed()) return cmd_consolidate(g, consolidate);
    if (c_train->parsed()) return cmd_train(g, train_args);
    if (c_eval->parsed()) return cmd_eval(g, eval);
    if (c_ablate->parsed()) return cmd_ablate(g, ablate);
  } catch (const Error& e) {
    std::cerr << "memtier: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "memtier: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "memtier: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
