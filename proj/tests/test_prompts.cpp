#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "promptlab/cot.hpp"
#include "promptlab/prompts.hpp"

using namespace promptlab;
using nlohmann::json;

namespace {

// Table world over {a, b}: task 0 switches to a mixed row right after a
// delimiter, task 1 is memoryless. `swap_ab` lists b before a.
World table_world(double lambda, bool swap_ab) {
  const double r0[] = {0.5, 0.3, 0.2}, alt[] = {0.1, 0.6, 0.3};
  auto row = [](double pa, double pb, double pe) { return json{{"a", pa}, {"b", pb}, {"<eos>", pe}}; };
  json toks = json::array({
      {{"name", "<sos>"}, {"role", "sos"}, {"emb", {1, 0}}},
      {{"name", "<eos>"}, {"role", "eos"}, {"emb", {0.309017, 0.951057}}},
      {{"name", "<pad>"}, {"role", "pad"}, {"emb", {0, 0}}},
      {{"name", "<delim>"}, {"role", "delim"}, {"emb", {-0.809017, 0.587785}}},
  });
  json ta = {{"name", "a"}, {"role", "content"}, {"emb", {-0.809017, -0.587785}}};
  json tb = {{"name", "b"}, {"role", "content"}, {"emb", {0.309017, -0.951057}}};
  toks.push_back(swap_ab ? tb : ta);
  toks.push_back(swap_ab ? ta : tb);
  auto mix = [&](int i) { return lambda * r0[i] + (1 - lambda) * alt[i]; };
  json j = {
      {"n", 5}, {"b", 0.05}, {"alpha", 1.0001}, {"beta", 0.9}, {"floor_mode", "validate"},
      {"tokens", toks},
      {"tasks", json::array({
                    {{"id", 0},
                     {"table", json::array({{{"prefix", json::array()}, {"row", row(r0[0], r0[1], r0[2])}},
                                            {{"prefix", {"<delim>"}}, {"row", row(mix(0), mix(1), mix(2))}},
                                            {{"prefix", {"a"}}, {"row", row(0.4, 0.4, 0.2)}}})}},
                    {{"id", 1}, {"table", json::array({{{"prefix", json::array()}, {"row", row(0.3, 0.3, 0.4)}}})}},
                })},
      {"prior", {0.5, 0.5}}};
  return parse_world_file(j.dump()).world;
}

World eps_world(double a1) {
  json j = json::parse(fixtures::kEpsWorld);
  j["tasks"][1]["init"]["a"] = a1;
  j["tasks"][1]["init"]["b"] = 0.6 - a1;
  return parse_world_file(j.dump()).world;
}

double oracle_ambiguity(const World& w, const Tokens& x) {
  const auto p = oracle::bayes_posterior(w, x);
  return 1.0 - *std::max_element(p.begin(), p.end());
}

CotWorld two_step(const World& w, std::vector<std::vector<int>> comps, Dist prior) {
  CotWorld cw;
  cw.base = w;
  cw.L = static_cast<int>(comps.front().size());
  cw.composites = std::move(comps);
  cw.composite_prior = std::move(prior);
  cw.validate();
  return cw;
}

}  // namespace

TEST_CASE("icl layout") {
  const World w = fixtures::world(fixtures::kTwoTask);
  const int a = w.vocab.id_of("a"), b = w.vocab.id_of("b"), dl = w.vocab.delim, pad = w.vocab.pad;
  const IclPrompt p0 = build_icl({}, dl, {a}, w.n, pad);
  CHECK(p0.flat() == Tokens{a});
  CHECK(p0.m() == 0);

  const IclPrompt p1 = build_icl({{{a}, {b}}}, dl, {a}, w.n, pad);
  CHECK(p1.flattened.columns() == std::vector<int>{a, b, dl, a, pad});

  CHECK_THROWS_AS(build_icl({{{a}, {b}}, {{a}, {b}}}, dl, {a}, w.n, pad), Error);
  CHECK_THROWS_AS(build_icl({{{}, {b}}}, dl, {a}, w.n, pad), Error);
  CHECK_THROWS_AS(build_icl({{{a}, {dl}}}, dl, {a}, w.n, pad), Error);
  try {
    build_icl({{{a, a}, {b, b}}}, dl, {a}, w.n, pad);
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Overflow);
  }
}

TEST_CASE("icl and cot parsers invert the builders") {
  Rng rng(7);
  const int dl = 3, pad = 2, width = 24;
  for (int trial = 0; trial < 500; ++trial) {
    auto part = [&]() {
      Tokens t(rng.range(1, 3));
      for (auto& v : t) v = rng.range(4, 6);
      return t;
    };
    const int m = rng.range(0, 3), L = rng.range(1, 3);
    std::vector<IclDemo> id;
    std::vector<CotDemo> cd;
    for (int i = 0; i < m; ++i) {
      id.push_back({part(), part()});
      CotDemo d{part(), {}};
      for (int j = 0; j < L; ++j) d.steps.push_back(part());
      cd.push_back(d);
    }
    const Tokens q = part();
    try {
      const IclPrompt ip = build_icl(id, dl, q, width, pad);
      const IclPrompt back = parse_icl(ip.flattened, dl, ip.x_lengths());
      REQUIRE(back.demos.size() == id.size());
      for (int i = 0; i < m; ++i) {
        CHECK(back.demos[i].x == id[i].x);
        CHECK(back.demos[i].y == id[i].y);
      }
      CHECK(back.query == q);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Overflow);
    }
    if (m == 0) continue;
    try {
      const CotPrompt cp = build_cot(cd, dl, q, width, pad);
      std::size_t total = q.size() + m;
      std::vector<int> xl;
      std::vector<std::vector<int>> sl;
      for (const auto& d : cd) {
        xl.push_back(static_cast<int>(d.x.size()));
        sl.emplace_back();
        total += d.x.size();
        for (const auto& s : d.steps) sl.back().push_back(static_cast<int>(s.size())), total += s.size();
      }
      CHECK(cp.flat().size() == total);
      const CotPrompt back = parse_cot(cp.flattened, dl, xl, sl);
      for (int i = 0; i < m; ++i) {
        CHECK(back.demos[i].x == cd[i].x);
        CHECK(back.demos[i].steps == cd[i].steps);
      }
      CHECK(back.query == q);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Overflow);
    }
  }
}

TEST_CASE("cot layout") {
  const int dl = 3, pad = 2;
  // one demo, three single-token steps
  const CotPrompt p = build_cot({{{4}, {{5}, {6}, {7}}}}, dl, {4}, 8, pad);
  CHECK(p.L() == 3);
  CHECK(p.flattened.columns() == std::vector<int>{4, 5, 6, 7, dl, 4, pad, pad});

  // one step is the ICL layout
  const CotPrompt c1 = build_cot({{{4}, {{5, 6}}}, {{6}, {{4}}}}, dl, {5}, 10, pad);
  const IclPrompt i1 = build_icl({{{4}, {5, 6}}, {{6}, {4}}}, dl, {5}, 10, pad);
  CHECK(c1.flattened == i1.flattened);

  CHECK_THROWS_AS(build_cot({{{4}, {{5}}}, {{4}, {{5}, {6}}}}, dl, {4}, 10, pad), Error);
}

TEST_CASE("nearly-Markov constant") {
  const World canon = load_world_file(fixtures::config_path("canonical_icl.json")).world;
  CHECK(estimate_phi(canon, canon.n) == 0.0);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng = Rng::derive(seed, 3);
    WorldFamily fam;
    World w = random_world(rng, fam);
    if (w.markov()) CHECK(estimate_phi(w, w.n) == 0.0);
  }

  for (double lambda : {1.0, 0.9, 0.5, 0.2}) {
    const World w = table_world(lambda, false);
    // only the empty suffix differs from the post-delimiter row
    const double r0[] = {0.5, 0.3, 0.2}, alt[] = {0.1, 0.6, 0.3};
    double bound = 0;
    for (int i = 0; i < 3; ++i)
      bound = std::max(bound, std::fabs(std::log(lambda * r0[i] + (1 - lambda) * alt[i]) - std::log(r0[i])));
    const double phi = estimate_phi(w, w.n);
    CHECK(phi <= bound + 1e-15);
    CHECK(phi == doctest::Approx(bound).epsilon(1e-12));
    // relabeling a and b does not change the constant
    CHECK(estimate_phi(table_world(lambda, true), w.n) == doctest::Approx(phi).epsilon(1e-14));
  }
  CHECK(estimate_phi(table_world(1.0, false), 5) == 0.0);
}

TEST_CASE("evidence shift") {
  const World w = fixtures::world(fixtures::kTwoTask);
  CHECK(estimate_varphi(w, w) == 0.0);
  World s = w;
  const int a = w.vocab.id_of("a"), b = w.vocab.id_of("b");
  s.tasks[0].rows[a][a] -= 0.15;
  s.tasks[0].rows[a][b] += 0.15;
  s.finalize();
  CHECK(estimate_varphi(w, s) == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(estimate_varphi(s, w) == estimate_varphi(w, s));

  const World other = restrict_tasks(w, {0});
  CHECK_THROWS_AS(estimate_varphi(w, other), Error);
}

TEST_CASE("prior imbalance") {
  World w = fixtures::world(fixtures::kTwoTask);
  CHECK(prior_imbalance(w) == 1.0);
  w.prior = {0.8, 0.2};
  CHECK(prior_imbalance(w) == doctest::Approx(4.0).epsilon(1e-15));
  w.prior = {1.0, 0.0};
  CHECK_THROWS_AS(prior_imbalance(w), Error);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng = Rng::derive(seed, 4);
    CHECK(prior_imbalance(random_world(rng, WorldFamily{})) >= 1.0);
  }
}

TEST_CASE("icl ambiguity coefficient") {
  const World w = fixtures::world(fixtures::kEpsWorld);
  const int a = w.vocab.id_of("a"), c = w.vocab.id_of("c"), dl = w.vocab.delim, pad = w.vocab.pad;
  const IclPrompt p = build_icl({{{a}, {c}}}, dl, {c}, w.n, pad);
  const EpsilonIcl e = epsilon_icl_detail(w, p);
  CHECK(e.query_ambiguity == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(e.demo_ambiguity.at(0) == doctest::Approx(0.1).epsilon(1e-13));
  CHECK(e.epsilon == doctest::Approx(2.0 * (0.1 / 0.9)).epsilon(1e-13));

  // brute-force ambiguities give the same value
  const double qa = oracle_ambiguity(w, {c}), da = oracle_ambiguity(w, {a, c});
  CHECK(std::fabs(e.epsilon - (da / (1 - da)) / (1 - qa)) <= 1e-12);

  // a single task has no ambiguity
  CHECK(epsilon_icl(restrict_tasks(w, {0}), p) == 0.0);
  CHECK(epsilon_icl(w, build_icl({}, dl, {c}, w.n, pad)) == 0.0);

  // non-decreasing as the demo becomes less informative
  double prev = -1;
  for (double a1 = 0.05; a1 <= 0.45; a1 += 0.01) {
    const double eps = epsilon_icl(eps_world(a1), p);
    CHECK(eps >= prev);
    prev = eps;
  }
}

TEST_CASE("cot ambiguity coefficient") {
  // task 1 starts with 'a' w.p. 0.1125, so 'a' leaves ambiguity 0.2
  const World w = eps_world(0.1125);
  const int a = w.vocab.id_of("a"), b = w.vocab.id_of("b"), c = w.vocab.id_of("c");
  const int dl = w.vocab.delim, pad = w.vocab.pad;
  CHECK(epsilon_cot(w, build_cot({{{b}, {{a}}}}, dl, {c}, w.n, pad)) > 0);
  const CotPrompt one = build_cot({{{a}, {{c}}}}, dl, {c}, w.n, pad);
  CHECK(epsilon_cot(w, one) == doctest::Approx(0.25).epsilon(1e-12));

  const CotPrompt pa = build_cot({{{a}, {{c}, {c}}}}, dl, {c}, w.n, pad);
  const CotPrompt pb = build_cot({{{b}, {{c}, {c}}}}, dl, {c}, w.n, pad);
  const CotPrompt both = build_cot({{{a}, {{c}, {c}}}, {{b}, {{c}, {c}}}}, dl, {c}, w.n + 3, pad);
  CHECK(epsilon_cot(w, both) == std::max(epsilon_cot(w, pa), epsilon_cot(w, pb)));
  const double ab = oracle_ambiguity(w, {b, c});
  CHECK(std::fabs(epsilon_cot(w, pb) - ab / (1 - ab)) <= 1e-12);

  CHECK(epsilon_cot(restrict_tasks(w, {1}), one) == 0.0);
}

TEST_CASE("K-separation") {
  CHECK(hamming({0, 1}, {0, 2}) == 1);
  CHECK(hamming({0, 0}, {1, 1}) == 2);
  CHECK_THROWS_AS(hamming({0}, {0, 1}), Error);

  const World w = fixtures::world(fixtures::kEpsWorld);
  const int a = w.vocab.id_of("a"), c = w.vocab.id_of("c"), dl = w.vocab.delim, pad = w.vocab.pad;
  const CotPrompt p = build_cot({{{a}, {{c}, {c}}}}, dl, {a}, w.n, pad);
  CHECK(k_separation(two_step(w, {{0, 0}, {1, 1}}, {0.5, 0.5}), p) == 2);
  CHECK(k_separation(two_step(w, {{0, 0}, {0, 1}, {1, 1}}, {0.3, 0.3, 0.4}), p) == 1);
  CHECK(k_separation(two_step(w, {{0, 1}}, {1.0}), p) == 3);
  // order of the composite list does not matter
  CHECK(k_separation(two_step(w, {{1, 1}, {0, 1}, {0, 0}}, {0.4, 0.3, 0.3}), p) == 1);

  for (const char* name : {"cot_k1.json", "cot_k2.json"}) {
    const WorldFile wf = load_world_file(fixtures::config_path(name));
    const PromptFile pf = load_prompt_file(fixtures::config_path("cot_prompt.json"), wf.world);
    const CotPrompt cp = build_cot(pf.cot.demos, pf.cot.delimiter, pf.cot.query, wf.world.n, wf.world.vocab.pad);
    CHECK(k_separation(*wf.cot, cp) == (std::string(name) == "cot_k1.json" ? 1 : 2));
  }
}

TEST_CASE("prior mismatch") {
  const World w = fixtures::world(fixtures::kEpsWorld);
  const int a = w.vocab.id_of("a"), c = w.vocab.id_of("c"), dl = w.vocab.delim, pad = w.vocab.pad;
  const CotPrompt p = build_cot({{{a}, {{c}, {c}}}}, dl, {a}, w.n, pad);

  // stationary embedding of the pretraining prior
  CHECK(prior_mismatch(w, two_step(w, {{0, 0}, {1, 1}}, w.prior), p) == 0.0);
  // all of its mass on two non-stationary paths; every path has positive likelihood
  // here, so the stationary mass counts as well
  CHECK(prior_mismatch(w, two_step(w, {{0, 1}, {1, 0}}, {0.5, 0.5}), p) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(prior_mismatch(w, two_step(w, {{0, 0}, {0, 1}}, {0.5, 0.5}), p) == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    Dist q(4);
    double s = 0;
    for (auto& v : q) s += v = rng.uniform() + 1e-3;
    for (auto& v : q) v /= s;
    const double d = prior_mismatch(w, two_step(w, {{0, 0}, {0, 1}, {1, 0}, {1, 1}}, q), p);
    CHECK(d >= 0);
    CHECK(d <= 2.0 + 1e-12);
  }
}
