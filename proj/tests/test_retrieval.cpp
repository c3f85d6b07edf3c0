#include <catch_amalgamated.hpp>

#include <algorithm>
#include <map>
#include <random>

#include "memtier/retrieval.hpp"
#include "support/synthetic_corpus.hpp"

using namespace memtier;
using namespace memtier::testing;
using Catch::Approx;

namespace {

// Looks texts up in a fixed table; unknown texts map to e0.
class TableEmbedder final : public Embedder {
 public:
  explicit TableEmbedder(std::map<std::string, std::vector<double>> table, std::size_t dim)
      : table_(std::move(table)), dim_(dim) {}
  std::size_t dimension() const override { return dim_; }
  std::vector<std::vector<double>> embed(std::span<const std::string> texts) const override {
    std::vector<std::vector<double>> out;
    for (const auto& t : texts) {
      auto it = table_.find(t);
      std::vector<double> v = it != table_.end() ? it->second : std::vector<double>(dim_, 0.0);
      l2_normalise(v);
      out.push_back(v);
    }
    return out;
  }

 private:
  std::map<std::string, std::vector<double>> table_;
  std::size_t dim_;
};

class FailingEmbedder final : public Embedder {
 public:
  std::size_t dimension() const override { return 4; }
  std::vector<std::vector<double>> embed(std::span<const std::string>) const override {
    throw ExternalServiceError("embedder down");
  }
};

class ShortEmbedder final : public Embedder {
 public:
  std::size_t dimension() const override { return 4; }
  std::vector<std::vector<double>> embed(std::span<const std::string>) const override { return {{1, 0, 0, 0}}; }
};

RankedEntry ranked(std::string id, std::uint32_t tokens) {
  RankedEntry r;
  r.entry.id = std::move(id);
  r.entry.tokens = tokens;
  r.entry.content = r.entry.id;
  return r;
}

// Independent RRF: score every id, then sort by (score desc, id asc).
std::vector<std::string> brute_rrf(const std::vector<std::string>& a, const std::vector<std::string>& b, double k) {
  std::map<std::string, double> s;
  for (std::size_t i = 0; i < a.size(); ++i) s[a[i]] += 1.0 / (k + static_cast<double>(i) + 1.0);
  for (std::size_t i = 0; i < b.size(); ++i) s[b[i]] += 1.0 / (k + static_cast<double>(i) + 1.0);
  std::vector<std::pair<std::string, double>> v(s.begin(), s.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  std::vector<std::string> out;
  for (const auto& [id, _] : v) out.push_back(id);
  return out;
}

}  // namespace

TEST_CASE("retrieval config defaults") {
  const RetrievalConfig c;
  CHECK(c.stage1_k1 == std::optional<std::size_t>(5));
  CHECK(c.stage2_k == 4);
  CHECK(c.token_budget == 300);
  CHECK(c.rrf_k == 60);
  CHECK(c.mode == RetrievalMode::bm25);
  CHECK(c.variant == Normalisation::raw);
  CHECK(c.weights == WeightVector{});
  RetrievalConfig bad;
  bad.stage1_k1 = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK_THROWS_AS(parse_retrieval_mode("sparse"), ValidationError);
  CHECK(parse_retrieval_mode("hybrid") == RetrievalMode::hybrid_rrf);
}

TEST_CASE("stage 1 collects sessions in fact rank order") {
  const auto corpus = scoping_corpus();
  const auto index = SemanticIndex::build(corpus.facts);
  const auto q = tokenize(scoping_query());
  CHECK(stage1_scope(q, index, 1).size() == 1);
  const auto three = stage1_scope(q, index, 3);
  CHECK(SessionSet(three.begin(), three.end()) == SessionSet{"s07", "s21", "s40"});
  CHECK(stage1_scope(q, index, 5) == three);
  CHECK(stage1_scope(q, index, 10) == three);
  CHECK(stage1_scope(q, index, std::nullopt) == three);
  CHECK(stage1_scope(tokenize("zzz"), index, 5).empty());
  CHECK(stage1_scope(q, SemanticIndex::build({}), 5).empty());
}

TEST_CASE("stage 1 returns fewer sessions than k1 when facts live in two sessions") {
  auto corpus = scoping_corpus();
  std::erase_if(corpus.facts, [](const SemanticFact& f) { return f.session_ids.count("s21") != 0; });
  const auto got = stage1_scope(tokenize(scoping_query()), SemanticIndex::build(corpus.facts), 3);
  CHECK(SessionSet(got.begin(), got.end()) == SessionSet{"s07", "s40"});
}

TEST_CASE("pipeline scoping soundness and sessions ratio") {
  const auto corpus = scoping_corpus();
  for (const std::optional<std::size_t> k1 : {std::optional<std::size_t>(1), std::optional<std::size_t>(3),
                                              std::optional<std::size_t>(5), std::optional<std::size_t>(10)}) {
    RetrievalConfig cfg;
    cfg.stage1_k1 = k1;
    cfg.stage2_k = 50;
    const auto r = RetrievalPipeline(cfg).retrieve(corpus.view(), scoping_query(), corpus.as_of);
    const SessionSet scope(r.scoped_session_ids.begin(), r.scoped_session_ids.end());
    CHECK(r.total_sessions == 53);
    CHECK(r.sessions_ratio() <= static_cast<double>(*k1) / 53.0);
    CHECK_FALSE(r.scope_fallback);
    for (const auto& e : r.ranked) CHECK(scope.count(e.entry.session_id) == 1);
    CHECK(r.mode == RetrievalMode::bm25);
  }
  RetrievalConfig unbounded;
  unbounded.stage1_k1 = std::nullopt;
  const auto r = RetrievalPipeline(unbounded).retrieve(corpus.view(), scoping_query(), corpus.as_of);
  CHECK(r.sessions_ratio() == 1.0);
  CHECK_FALSE(r.scoping_enabled);
}

TEST_CASE("empty semantic tier falls back to unscoped stage 2") {
  auto corpus = scoping_corpus();
  corpus.facts.clear();
  const auto r = RetrievalPipeline(RetrievalConfig{}).retrieve(corpus.view(), scoping_query(), corpus.as_of);
  CHECK(r.scope_fallback);
  CHECK(r.sessions_ratio() == 1.0);
  CHECK_FALSE(r.ranked.empty());
}

TEST_CASE("system entries never reach rankings or context") {
  std::vector<EpisodicEntry> entries{
      make_entry("a", "s1", "[system] deploy deploy deploy", day(1)),
      make_entry("b", "s1", "we deploy on fridays", day(1)),
      make_entry("c", "s2", "[system] compaction marker deploy", day(2)),
  };
  RetrievalConfig cfg;
  cfg.stage1_k1 = std::nullopt;
  const auto r = RetrievalPipeline(cfg).retrieve({entries, {}}, "deploy", day(3));
  REQUIRE(r.ranked.size() == 1);
  CHECK(r.ranked[0].entry.id == "b");
  CHECK(r.packed_context.find("[system]") == std::string::npos);
  CHECK(r.total_sessions == 1);
}

TEST_CASE("stage 2 ordering examples") {
  std::vector<Candidate> pool(2);
  pool[0].id = "low";
  pool[0].raw_bm25 = 0.5;
  pool[1].id = "high";
  pool[1].raw_bm25 = 3.0;
  ScoringContext ctx;
  CHECK(rank_pool(pool, score_pool(pool, ctx)).front() == 1);

  pool[0].id = "old";
  pool[0].raw_bm25 = 2.5;
  pool[0].age_days = 90;
  pool[1].id = "fresh";
  pool[1].raw_bm25 = 1.9;
  pool[1].age_days = 0;
  const auto scores = score_pool(pool, ctx);
  CHECK(rank_pool(pool, scores).front() == 0);
  CHECK(scores[0].bypass_applied);
  CHECK(scores[0].bypass_reason == BypassReason::bm25_threshold);
  CHECK(scores[0].phi_decay == 1.0);
  CHECK(scores[0].composite == Approx(0.35 * 2.5 + 0.25 + 0.125));
  CHECK(scores[1].composite == Approx(0.35 * 1.9 + 0.25 + 0.125));
}

TEST_CASE("stage2_k bounds the result") {
  const auto corpus = scoping_corpus();
  RetrievalConfig cfg;
  cfg.stage1_k1 = std::nullopt;
  cfg.stage2_k = 1;
  CHECK(RetrievalPipeline(cfg).retrieve(corpus.view(), scoping_query(), corpus.as_of).ranked.size() == 1);
  std::vector<MemoryItem> pool;
  for (const auto& e : corpus.entries) pool.push_back({e, Tier::episodic});
  CHECK(stage2_retrieve(tokenize("database"), pool, {}, cfg, corpus.as_of).size() == 1);
}

TEST_CASE("future entries are treated as age zero") {
  std::vector<EpisodicEntry> entries{make_entry("a", "s1", "alpha", day(10))};
  RetrievalConfig cfg;
  cfg.stage1_k1 = std::nullopt;
  const auto r = RetrievalPipeline(cfg).retrieve({entries, {}}, "beta", day(5));
  REQUIRE(r.ranked.size() == 1);
  CHECK(r.ranked[0].breakdown.phi_decay == 1.0);
}

TEST_CASE("hashing embedder yields unit vectors deterministically") {
  const HashingEmbedder e(64);
  const std::vector<std::string> texts{"hello world", "", "another text here"};
  const auto v = e.embed(texts);
  for (const auto& x : v) {
    double n = 0;
    for (double c : x) n += c * c;
    CHECK(std::sqrt(n) == Approx(1.0).margin(1e-6));
    CHECK(x.size() == 64);
  }
  CHECK(e.embed(texts) == v);
}

TEST_CASE("dense rank identity and orthogonality") {
  const TableEmbedder emb({{"q", {1, 0, 0}}, {"same", {1, 0, 0}}, {"orth", {0, 1, 0}}}, 3);
  std::vector<MemoryItem> items(2);
  items[0].entry = make_entry("o", "s", "orth", day(1));
  items[1].entry = make_entry("m", "s", "same", day(1));
  const auto hits = dense_rank("q", items, emb);
  REQUIRE(hits.size() == 2);
  CHECK(hits[0].index == 1);
  CHECK(hits[0].similarity == Approx(1.0).margin(1e-6));
  CHECK(hits[1].similarity == Approx(0.0).margin(1e-6));
}

TEST_CASE("dense rank matches a brute-force cosine sort") {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::string, std::vector<double>> table;
    std::vector<MemoryItem> items;
    for (int i = 0; i < 11; ++i) {
      std::vector<double> v(8);
      for (auto& x : v) x = g(rng);
      table["t" + std::to_string(i)] = v;
      if (i > 0) {
        MemoryItem it;
        it.entry = make_entry("e" + std::to_string(i), "s", "t" + std::to_string(i), day(1));
        items.push_back(it);
      }
    }
    const TableEmbedder emb(table, 8);
    const auto hits = dense_rank("t0", items, emb);
    auto unit = [&](std::vector<double> v) {
      l2_normalise(v);
      return v;
    };
    const auto q = unit(table["t0"]);
    std::vector<std::pair<double, std::size_t>> expected;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto v = unit(table[items[i].entry.content]);
      double c = 0;
      for (std::size_t d = 0; d < 8; ++d) c += q[d] * v[d];
      expected.emplace_back(c, i);
    }
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < hits.size(); ++i) {
      REQUIRE(hits[i].index == expected[i].second);
      REQUIRE(hits[i].similarity == Approx(expected[i].first).margin(1e-12));
    }
  }
}

TEST_CASE("embedder failures surface to the caller") {
  const auto corpus = scoping_corpus();
  RetrievalConfig cfg;
  cfg.mode = RetrievalMode::dense;
  const FailingEmbedder failing;
  CHECK_THROWS_AS(RetrievalPipeline(cfg, &failing).retrieve(corpus.view(), scoping_query(), corpus.as_of),
                  ExternalServiceError);
  const ShortEmbedder short_reply;
  CHECK_THROWS_AS(RetrievalPipeline(cfg, &short_reply).retrieve(corpus.view(), scoping_query(), corpus.as_of),
                  ExternalServiceError);
  CHECK_THROWS_AS(RetrievalPipeline(cfg, nullptr), ValidationError);
}

TEST_CASE("rrf examples") {
  const auto fused = rrf_fuse({"a", "b"}, {"a", "c"}, 60);
  CHECK(fused[0].id == "a");
  CHECK(fused[0].score == Approx(2.0 / 61.0).margin(1e-12));
  CHECK(fused[0].score == Approx(0.03279).margin(1e-5));
  const auto single = rrf_fuse({"x"}, {}, 60);
  CHECK(single[0].score == Approx(0.01639).margin(1e-5));
  const std::vector<std::string> same{"p", "q", "r", "s"};
  const auto ident = rrf_fuse(same, same, 60);
  std::vector<std::string> ids;
  for (const auto& f : ident) ids.push_back(f.id);
  CHECK(ids == same);
}

TEST_CASE("rrf matches a brute-force oracle on random rankings") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t universe = 1 + rng() % 50;
    std::vector<std::string> pool;
    for (std::size_t i = 0; i < universe; ++i) pool.push_back("i" + std::to_string(i));
    auto a = pool, b = pool;
    std::shuffle(a.begin(), a.end(), rng);
    std::shuffle(b.begin(), b.end(), rng);
    a.resize(rng() % (universe + 1));
    b.resize(rng() % (universe + 1));
    std::vector<std::string> got;
    for (const auto& f : rrf_fuse(a, b, 60)) got.push_back(f.id);
    REQUIRE(got == brute_rrf(a, b, 60));
  }
}

TEST_CASE("hybrid pipeline records fused scores and stage latencies") {
  const auto corpus = scoping_corpus();
  RetrievalConfig cfg;
  cfg.mode = RetrievalMode::hybrid_rrf;
  const HashingEmbedder emb;
  const auto r = RetrievalPipeline(cfg, &emb).retrieve(corpus.view(), scoping_query(), corpus.as_of);
  CHECK(r.mode == RetrievalMode::hybrid_rrf);
  REQUIRE_FALSE(r.ranked.empty());
  for (const auto& e : r.ranked) {
    CHECK(e.fused_score.has_value());
    CHECK(e.dense_similarity.has_value());
  }
  for (std::size_t i = 1; i < r.ranked.size(); ++i) CHECK(*r.ranked[i - 1].fused_score >= *r.ranked[i].fused_score);
  CHECK(r.latency.total_micros >= r.latency.stage1_micros);
}

TEST_CASE("pack context examples") {
  std::vector<RankedEntry> hundred{ranked("a", 100), ranked("b", 100), ranked("c", 100), ranked("d", 100)};
  auto p = pack_context(hundred, 300);
  CHECK(p.entry_ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(p.token_count == 300);
  CHECK(p.text == "a\nb\nc");

  std::vector<RankedEntry> big{ranked("huge", 700), ranked("ok", 200)};
  CHECK(pack_context(big, 300).entry_ids == std::vector<std::string>{"ok"});

  std::vector<RankedEntry> mixed{ranked("a", 40), ranked("b", 90), ranked("c", 30), ranked("d", 120),
                                 ranked("e", 60)};
  const auto small = pack_context(mixed, 150);
  const auto large = pack_context(mixed, 600);
  for (const auto& id : small.entry_ids) {
    CHECK(std::find(large.entry_ids.begin(), large.entry_ids.end(), id) != large.entry_ids.end());
  }
  CHECK_THROWS_AS(pack_context(mixed, 0), ValidationError);
}

TEST_CASE("packing stays within budget and in rank order") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<RankedEntry> list;
    const auto n = rng() % 12;
    for (std::size_t i = 0; i < n; ++i) list.push_back(ranked("e" + std::to_string(i), static_cast<std::uint32_t>(rng() % 400)));
    const std::size_t budget = 1 + rng() % 700;
    const auto p = pack_context(list, budget);
    REQUIRE(p.token_count <= budget);
    std::size_t last = 0;
    for (const auto& id : p.entry_ids) {
      const auto pos = static_cast<std::size_t>(std::stoul(id.substr(1)));
      REQUIRE((last == 0 || pos > last - 1));
      last = pos + 1;
    }
  }
}

TEST_CASE("timestamps can prefix packed lines") {
  std::vector<RankedEntry> list{ranked("a", 1)};
  list[0].entry.timestamp = parse_timestamp("2024-01-02T03:04:05Z");
  CHECK(pack_context(list, 10, true).text == "[2024-01-02T03:04:05Z] a");
}

TEST_CASE("oracle context examples") {
  const std::vector<OracleSession> one{{"g1", "gold text"}};
  CHECK(oracle_context(one, {}) == "gold text");
  std::vector<OracleSession> five;
  for (int i = 0; i < 5; ++i) five.push_back({"g" + std::to_string(i), "t" + std::to_string(i)});
  CHECK(oracle_context(five, {}) == "t0\nt1\nt2");
  const std::vector<std::string> facts{"a kv b", "c kv d"};
  CHECK(oracle_context({}, facts) == "a kv b\nc kv d");
  CHECK_THROWS_AS(oracle_context({}, {}), ValidationError);
}

TEST_CASE("facts can be ranked alongside entries at the semantic tier") {
  const auto corpus = scoping_corpus();
  RetrievalConfig cfg;
  cfg.include_facts = true;
  cfg.stage2_k = 100;
  const auto r = RetrievalPipeline(cfg).retrieve(corpus.view(), scoping_query(), corpus.as_of);
  const auto facts = std::count_if(r.ranked.begin(), r.ranked.end(),
                                   [](const RankedEntry& e) { return e.tier == Tier::semantic; });
  CHECK(facts >= 3);
}
