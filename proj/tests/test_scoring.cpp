#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "memtier/scoring.hpp"
#include "support/synthetic_corpus.hpp"

using namespace memtier;
using Catch::Approx;

TEST_CASE("weight vector defaults and validation") {
  const WeightVector w;
  CHECK(w.as_array() == std::array<double, 5>{0.0, 0.35, 0.25, 0.25, 0.15});
  CHECK_NOTHROW(w.validate());
  CHECK_THROWS_AS((WeightVector{0, 0.5, 0.5, 0.5, 0}.validate()), ValidationError);
  CHECK_THROWS_AS((WeightVector{0, 1.1, -0.1, 0, 0}.validate()), ValidationError);
}

TEST_CASE("removing a signal renormalises the rest") {
  const auto w = WeightVector{}.without(Signal::decay);
  CHECK(w.sem == 0.0);
  CHECK(w.bm25 == Approx(0.4667).margin(1e-4));
  CHECK(w.decay == 0.0);
  CHECK(w.cw == Approx(0.3333).margin(1e-4));
  CHECK(w.tier == Approx(0.2).margin(1e-4));
  CHECK(w.sum() == Approx(1.0).margin(1e-12));
  CHECK_THROWS_AS(WeightVector::bm25_only().without(Signal::bm25), ValidationError);
}

TEST_CASE("decay signal") {
  const DecayConfig cfg;
  CHECK(decay_signal(0, false, cfg) == 1.0);
  CHECK(decay_signal(14, false, cfg) == Approx(0.4966).margin(1e-4));
  CHECK(decay_signal(90, true, cfg) == 1.0);
  CHECK_THROWS_AS(decay_signal(-1, false, cfg), ValidationError);
  // Half-life ln2 / 0.05 = 13.86 days.
  CHECK(decay_signal(13.8, false, cfg) > 0.5);
  CHECK(decay_signal(13.9, false, cfg) < 0.5);
}

TEST_CASE("bypass rule") {
  const DecayConfig cfg;
  const SessionSet scope{"s1"};
  auto d = evaluate_bypass(2.5, "s9", scope, cfg);
  CHECK(d.applied);
  CHECK(d.reason == BypassReason::bm25_threshold);
  d = evaluate_bypass(0.1, "s1", scope, cfg);
  CHECK(d.applied);
  CHECK(d.reason == BypassReason::semantic_scope);
  d = evaluate_bypass(2.0, "s9", scope, cfg);
  CHECK_FALSE(d.applied);
  CHECK(d.reason == BypassReason::none);
  CHECK(evaluate_bypass(3.0, "s1", scope, cfg).reason == BypassReason::bm25_threshold);
}

TEST_CASE("cw signal") {
  CHECK(cw_signal(-1) == 0.0);
  CHECK(cw_signal(0) == 0.5);
  CHECK(cw_signal(1) == 1.0);
  CHECK_THROWS_AS(cw_signal(1.01), ValidationError);
  CHECK_THROWS_AS(cw_signal(std::nan("")), ValidationError);
}

TEST_CASE("composite score examples") {
  Candidate c;
  c.id = "m";
  c.session_id = "s";
  c.raw_bm25 = 0.6931;
  const WeightVector w;
  const TierConfig tiers;
  const DecayConfig decay;
  const auto b = composite_score(c, c.raw_bm25, w, tiers, decay, {});
  CHECK(b.phi_sem == 0.0);
  CHECK(b.phi_decay == 1.0);
  CHECK(b.phi_cw == 0.5);
  CHECK(b.tier_bonus == 0.0);
  CHECK(b.composite == Approx(0.6176).margin(1e-4));
  CHECK_FALSE(b.bypass_applied);

  c.tier = Tier::semantic;
  CHECK(composite_score(c, c.raw_bm25, w, tiers, decay, {}).composite == Approx(0.6476).margin(1e-4));

  c.tier = Tier::episodic;
  c.age_days = 40;
  c.cognitive_weight = 0.7;
  CHECK(composite_score(c, c.raw_bm25, WeightVector::bm25_only(), tiers, decay, {}).composite == c.raw_bm25);
  CHECK(composite_score(c, c.raw_bm25, w, tiers, decay, {}) == composite_score(c, c.raw_bm25, w, tiers, decay, {}));
}

TEST_CASE("bypass forces full decay signal at any age") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> age(0, 1000), raw(2.0001, 20);
  for (int i = 0; i < 500; ++i) {
    Candidate c;
    c.raw_bm25 = raw(rng);
    c.age_days = age(rng);
    CHECK(composite_score(c, c.raw_bm25, {}, {}, {}, {}).phi_decay == 1.0);
  }
}

TEST_CASE("normalisation examples") {
  const std::vector<double> a{0, 1, 3};
  const auto mm = normalise_scores(a, Normalisation::minmax);
  CHECK(mm[0] == 0.0);
  CHECK(mm[1] == Approx(1.0 / 3.0).margin(1e-12));
  CHECK(mm[2] == 1.0);
  CHECK(normalise_scores(std::vector<double>{2, 2, 2}, Normalisation::zscore) == std::vector<double>{0, 0, 0});
  CHECK(normalise_scores(std::vector<double>{2, 2}, Normalisation::minmax) == std::vector<double>{0.5, 0.5});
  const auto lp = normalise_scores(std::vector<double>{0, std::exp(1.0) - 1}, Normalisation::log1p);
  CHECK(lp[0] == 0.0);
  CHECK(lp[1] == Approx(1.0).margin(1e-12));
  const auto z = normalise_scores(std::vector<double>{1, 3}, Normalisation::zscore);
  CHECK(z[0] == Approx(-1.0));
  CHECK(z[1] == Approx(1.0));
  CHECK_THROWS_AS(normalise_scores(std::vector<double>{}, Normalisation::raw), ValidationError);
}

TEST_CASE("equal-fusion variant swaps in equal weights") {
  CHECK(effective_weights(WeightVector::bm25_only(), Normalisation::zscore_equal_fusion) ==
        WeightVector::equal_fusion());
  CHECK(effective_weights(WeightVector::bm25_only(), Normalisation::zscore) == WeightVector::bm25_only());
}

TEST_CASE("bm25-only rankings are invariant under monotone normalisations") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const auto docs = testing::random_documents(rng, 40);
    const auto query = testing::random_query(rng);
    const auto raw = Bm25Index::build(docs).score_all(query);
    std::vector<Candidate> pool;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      Candidate c;
      c.id = docs[i].id;
      c.timestamp = testing::day(static_cast<int>(rng() % 5));
      c.raw_bm25 = raw[i];
      c.age_days = static_cast<double>(rng() % 100);
      c.cognitive_weight = 0.0;
      pool.push_back(c);
    }
    ScoringContext ctx;
    ctx.weights = WeightVector::bm25_only();
    std::vector<std::vector<std::size_t>> orders;
    for (const auto v : {Normalisation::raw, Normalisation::log1p, Normalisation::minmax, Normalisation::zscore}) {
      ctx.variant = v;
      orders.push_back(rank_pool(pool, score_pool(pool, ctx)));
    }
    for (std::size_t v = 1; v < orders.size(); ++v) REQUIRE(orders[v] == orders[0]);
  }
}

TEST_CASE("ties break by newer timestamp then id") {
  std::vector<Candidate> pool(3);
  pool[0].id = "b";
  pool[0].timestamp = testing::day(1);
  pool[1].id = "a";
  pool[1].timestamp = testing::day(1);
  pool[2].id = "c";
  pool[2].timestamp = testing::day(2);
  ScoringContext ctx;
  const auto order = rank_pool(pool, score_pool(pool, ctx));
  CHECK(order == std::vector<std::size_t>{2, 1, 0});
}

TEST_CASE("top-k set at bm25 dominance survives small weight perturbations") {
  const auto pool = testing::dominance_pool();
  ScoringContext ctx;
  const auto top = [&](const WeightVector& w) {
    ctx.weights = w;
    auto order = rank_pool(pool, score_pool(pool, ctx));
    order.resize(4);
    std::sort(order.begin(), order.end());
    return order;
  };
  const auto base = top(WeightVector{});
  for (const double dd : {-0.03, 0.0, 0.03}) {
    for (const double dc : {-0.03, 0.0, 0.03}) {
      for (const double dt : {-0.03, 0.0, 0.03}) {
        auto w = WeightVector{};
        w.decay += dd;
        w.cw += dc;
        w.tier += dt;
        const double s = w.sum();
        w = WeightVector::from_array({0, w.bm25 / s, w.decay / s, w.cw / s, w.tier / s});
        CHECK(top(w) == base);
      }
    }
  }
}

TEST_CASE("enum string round trips") {
  for (const auto v : {Normalisation::raw, Normalisation::log1p, Normalisation::minmax, Normalisation::zscore,
                       Normalisation::zscore_equal_fusion}) {
    CHECK(parse_normalisation(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_normalisation("N7"), ValidationError);
  CHECK(to_string(BypassReason::bm25_threshold) == "bm25_threshold");
  CHECK(to_string(Tier::procedural) == "procedural");
}
