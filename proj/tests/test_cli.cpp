#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <sstream>

#include "support/synthetic_corpus.hpp"

using namespace memtier;
using namespace memtier::testing;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::vector<json> lines() const {
    std::vector<json> v;
    std::istringstream in(out);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) v.push_back(json::parse(line));
    }
    return v;
  }
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (const char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

Run run(const std::vector<std::string>& args) {
  std::string cmd = quote(MEMTIER_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string fixture() { return (data_dir() / "synthetic_20q.jsonl").string(); }

void seed_workspace(const TempDir& dir) {
  const auto ws = dir.path().string();
  const char* filler[] = {"lunch was pasta", "the weather is grey", "reading a novel tonight",
                          "bought new shoes", "coffee tastes burnt", "walked the dog at dawn",
                          "fixed the leaking tap", "planning a picnic", "watched a documentary",
                          "the train was late"};
  int i = 0;
  for (const char* f : filler) {
    const auto ts = "2024-05-0" + std::to_string(1 + i % 9) + "T10:00:00Z";
    REQUIRE(run({"--workspace", ws, "append", "--project", "p", "--session", "s" + std::to_string(i), "--content", f,
                 "--timestamp", ts})
                .code == 0);
    ++i;
  }
}

}  // namespace

TEST_CASE("append then retrieve round trip") {
  TempDir dir;
  seed_workspace(dir);
  const auto ws = dir.path().string();
  const auto appended = run({"--workspace", ws, "append", "--project", "p", "--session", "k8s", "--content",
                             "kubernetes cluster upgrade scheduled", "--timestamp", "2024-01-01T00:00:00Z"});
  REQUIRE(appended.code == 0);
  const auto id = appended.lines().at(0)["id"].get<std::string>();

  const auto r = run({"--workspace", ws, "retrieve", "--project", "p", "--query", "kubernetes cluster upgrade",
                      "--explain", "--as-of", "2024-06-01T00:00:00Z"});
  REQUIRE(r.code == 0);
  const auto out = r.lines().at(0);
  REQUIRE_FALSE(out["ranked"].empty());
  CHECK(out["ranked"][0]["id"] == id);
  CHECK(out["ranked"][0]["breakdown"]["bypass_reason"] == "bm25_threshold");
  CHECK(out["ranked"][0]["breakdown"]["phi_decay"] == 1.0);
  CHECK(out.contains("config"));

  const auto unscoped = run({"--workspace", ws, "retrieve", "--project", "p", "--query", "kubernetes", "--k1", "inf"});
  CHECK(unscoped.lines().at(0)["sessions_ratio"] == 1.0);

  const auto hybrid = run({"--workspace", ws, "retrieve", "--project", "p", "--query", "kubernetes", "--mode", "hybrid"});
  REQUIRE(hybrid.code == 0);
  const auto latency = hybrid.lines().at(0)["latency_micros"];
  for (const char* key : {"stage1", "stage2", "dense", "pack", "total"}) CHECK(latency.contains(key));
  CHECK(hybrid.lines().at(0)["ranked"][0].contains("fused_score"));

  const auto pretty = run({"--workspace", ws, "retrieve", "--project", "p", "--query", "kubernetes", "--k1", "inf",
                           "--pretty"});
  CHECK(pretty.out.rfind("sessions ratio 1.00", 0) == 0);
}

TEST_CASE("append with a failure outcome writes negative deltas") {
  TempDir dir;
  const auto ws = dir.path().string();
  REQUIRE(run({"--workspace", ws, "append", "--project", "p", "--session", "s", "--content", "run the build"}).code == 0);
  const auto r = run({"--workspace", ws, "append", "--project", "p", "--session", "s", "--content",
                      "build failed on lint", "--outcome", "failure"});
  REQUIRE(r.code == 0);
  const auto out = r.lines().at(0);
  CHECK(out["reward"] == -0.5);
  REQUIRE(out["attribution"].size() == 2);
  for (const auto& u : out["attribution"]) CHECK(u["cognitive_weight"].get<double>() < 0.0);
  MemoryStore store(dir.path());
  double total = 0.0;
  for (const auto& e : store.load_entries("p").entries) total += e.cognitive_weight;
  CHECK(total == Catch::Approx(-0.05));
}

TEST_CASE("usage and data errors map to exit codes") {
  TempDir dir;
  const auto ws = dir.path().string();
  CHECK(run({"--workspace", ws, "append", "--session", "s", "--content", "x"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--workspace", ws, "append", "--project", "p", "--session", "s", "--content", "x", "--outcome", "meh"})
            .code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--workspace", ws, "retrieve", "--project", "p", "--query", "q", "--k1", "zero"}).code == 3);
  CHECK(run({"--workspace", ws, "append", "--project", "p", "--session", "s", "--content", "x", "--timestamp",
             "yesterday"})
            .code == 3);
  CHECK(run({"eval", "--dataset", (dir.path() / "missing.jsonl").string()}).code == 3);
  CHECK(run({"eval", "--dataset", fixture(), "--reader", "http"}).code == 3);
}

TEST_CASE("unreachable reader is an external-service failure") {
  TempDir dir;
  const auto cfg = dir.path() / "cfg.json";
  {
    std::ofstream(cfg) << R"({"reader": {"url": "http://127.0.0.1:1"}})";
  }
  const auto r = run({"--config", cfg.string(), "eval", "--dataset", fixture()});
  CHECK(r.code == 4);
  const auto lines = r.lines();
  REQUIRE(lines.size() == 21);
  CHECK(lines[0]["reader_failures"] == 20);
}

TEST_CASE("eval modes on the synthetic fixture") {
  const auto none = run({"eval", "--dataset", fixture(), "--mode", "no_retrieval"});
  const auto retrieval = run({"eval", "--dataset", fixture(), "--mode", "retrieval"});
  const auto oracle = run({"eval", "--dataset", fixture(), "--mode", "oracle"});
  REQUIRE(none.code == 0);
  REQUIRE(retrieval.code == 0);
  const double a0 = none.lines()[0]["accuracy"];
  const double a1 = retrieval.lines()[0]["accuracy"];
  const double a2 = oracle.lines()[0]["accuracy"];
  CHECK(a1 > a0);
  CHECK(a2 >= a1);
  CHECK(retrieval.lines().size() == 21);
  CHECK(retrieval.lines()[0]["config"]["eval_mode"] == "retrieval");
  CHECK(run({"eval", "--dataset", fixture()}).out == retrieval.out);

  TempDir cfg_dir;
  const auto cfg = cfg_dir.path() / "echo.json";
  {
    std::ofstream(cfg) << retrieval.lines()[0]["config"]["reader"].dump(-1).insert(0, "{\"reader\": ").append("}");
  }
  CHECK(retrieval.lines()[0]["config"]["reader"]["kind"] == "auto");
  const auto echo_reader = run({"--config", cfg.string(), "eval", "--dataset", fixture()});
  CHECK(echo_reader.lines()[0]["config"]["reader"]["kind"] == "auto");
  const auto echo = run({"eval", "--dataset", fixture(), "--reader", "echo"}).lines()[0];
  CHECK(echo["config"]["reader"]["kind"] == "echo");
  CHECK(echo["accuracy"].get<double>() <= a1);

  TempDir dir;
  const auto path = (dir.path() / "report.jsonl").string();
  CHECK(run({"eval", "--dataset", fixture(), "--out", path, "--pretty"}).out.find("overall") != std::string::npos);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == retrieval.out);
}

TEST_CASE("training is reproducible from the seed") {
  const std::vector<std::string> args{"train", "--dataset", fixture(), "--seed", "7", "--questions", "20"};
  const auto a = run(args);
  const auto b = run(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  const auto lines = a.lines();
  REQUIRE(lines.size() == 6);  // 80 episodes in batches of 16, then the result
  CHECK(lines.back()["kind"] == "result");
  CHECK(lines.back()["config"]["seed"] == 7);
  const auto proxy = run({"train", "--dataset", fixture(), "--questions", "20", "--reward", "cw_proxy"});
  REQUIRE(proxy.code == 0);
  CHECK(proxy.lines().back()["delta"] == json{{"sem", 0.0}, {"bm25", 0.0}, {"decay", 0.0}, {"cw", 0.0}, {"tier", 0.0}});
}

TEST_CASE("ablation grids emit one row per cell") {
  const auto r = run({"ablate", "--dataset", fixture(), "--grid", "default"});
  REQUIRE(r.code == 0);
  const auto lines = r.lines();
  REQUIRE(lines.size() == 16);
  CHECK(lines[0]["kind"] == "ablation");
  CHECK(lines[0]["cells"] == 15);
  CHECK(lines[1]["label"] == "full");
  const auto sweep = run({"ablate", "--dataset", fixture(), "--grid", "sweep", "--ks", "2", "4", "--budgets", "150",
                          "300", "600"});
  CHECK(sweep.lines().size() == 7);
  CHECK(run({"ablate", "--dataset", fixture(), "--grid", "bogus"}).code == 3);
}

TEST_CASE("consolidation from the command line") {
  TempDir dir;
  const auto ws = dir.path().string();
  REQUIRE(run({"--workspace", ws, "append", "--project", "p", "--session", "s", "--content", "favorite color: blue"})
              .code == 0);
  const auto first = run({"--workspace", ws, "consolidate", "--project", "p"});
  REQUIRE(first.code == 0);
  CHECK(first.lines()[0]["facts_emitted"] == 1);
  CHECK(run({"--workspace", ws, "consolidate", "--project", "p"}).lines()[0]["facts_emitted"] == 0);
  const auto daemon = run({"--workspace", ws, "consolidate", "--project", "p", "--daemon", "--interval", "0.02",
                           "--max-passes", "2"});
  REQUIRE(daemon.code == 0);
  const auto lines = daemon.lines();
  REQUIRE(lines.size() == 3);
  CHECK(lines.back()["kind"] == "daemon_stopped");
}
