#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "promptlab/bounds.hpp"
#include "promptlab/cot.hpp"
#include "promptlab/inference.hpp"

using namespace promptlab;

namespace {

World small_random(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 1);
  WorldFamily fam;
  fam.max_content = 3;
  fam.max_n = 5;
  return random_world(rng, fam);
}

// chain of World::prob with the delimiter reset done by hand
double chain(const World& w, int task, Tokens h, const Tokens& seq) {
  double p = 1.0;
  for (int t : seq) {
    if (t == w.vocab.delim) {
      h.push_back(t);
      continue;
    }
    p *= w.prob(task, h, t);
    h.push_back(t);
  }
  return p;
}

}  // namespace

TEST_CASE("posterior matches brute-force Bayes") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const World w = small_random(seed);
    const auto prefixes = enumerate_prefixes(w);
    for (std::size_t i = 0; i < prefixes.size(); i += 2) {
      const Posterior p = posterior(w, prefixes[i]);
      const auto want = oracle::bayes_posterior(w, prefixes[i]);
      REQUIRE(p.weights.size() == want.size());
      double s = 0;
      for (std::size_t t = 0; t < want.size(); ++t) {
        CHECK(p.weights[t] == doctest::Approx(want[t]).epsilon(1e-9));
        CHECK(p.weights[t] >= 0);
        s += p.weights[t];
      }
      CHECK(std::fabs(s - 1) <= 1e-12);
    }
  }
}

TEST_CASE("history is evidence") {
  const World w = fixtures::world(fixtures::kTwoTask);
  const int a = w.vocab.id_of("a"), b = w.vocab.id_of("b");
  const Posterior split = posterior(w, Tokens{b}, Tokens{a});
  const Posterior joint = posterior(w, Tokens{a, b});
  for (int t = 0; t < 2; ++t) CHECK(split.weights[t] == doctest::Approx(joint.weights[t]).epsilon(1e-14));
  // empty evidence returns the prior
  const Posterior none = posterior(w, Tokens{});
  CHECK(none.weights == w.prior);
  // 0.5*0.9 vs 0.5*0.1
  CHECK(posterior(w, Tokens{a}).weights[0] == doctest::Approx(0.9).epsilon(1e-14));
}

TEST_CASE("ambiguity and tie-breaking") {
  const World w = fixtures::world(fixtures::kTwoTask);
  const int a = w.vocab.id_of("a"), b = w.vocab.id_of("b");
  const AmbiguityReport r = ambiguity(w, Tokens{a});
  CHECK(r.dominated_task == 0);
  CHECK(r.ambiguity == doctest::Approx(0.1).epsilon(1e-13));
  CHECK(r.entropy == doctest::Approx(-(0.9 * std::log(0.9) + 0.1 * std::log(0.1))).epsilon(1e-13));
  CHECK(ambiguity(w, Tokens{b}).dominated_task == 1);

  // uniform prior, empty evidence: the lowest index wins
  const AmbiguityReport tie = ambiguity(w, Tokens{});
  CHECK(tie.dominated_task == 0);
  CHECK(tie.ambiguity == 0.5);

  const Posterior p{{0, 1, 2}, {0.2, 0.5, 0.3}};
  CHECK(ambiguity_over(p, {0, 2}) == doctest::Approx(0.7));
  CHECK(ambiguity_over(p, {1}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(ambiguity_over(p, {}), Error);
  CHECK_THROWS_AS(ambiguity_over(p, {4}), Error);

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const World r2 = small_random(seed);
    for (const auto& x : enumerate_prefixes(r2)) {
      const auto rep = ambiguity(r2, x);
      CHECK(rep.ambiguity >= 0);
      CHECK(rep.ambiguity <= 1 - 1.0 / r2.num_tasks() + 1e-12);
    }
  }
}

TEST_CASE("zero evidence") {
  const World w = fixtures::world(fixtures::kTwoTask);
  const int a = w.vocab.id_of("a"), eos = w.vocab.eos;
  CHECK_THROWS_AS(posterior(w, Tokens{eos, a}), Error);
  try {
    normalize_log({kNegInf, kNegInf});
    FAIL("expected ZeroEvidence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroEvidence);
  }
  const Dist d = normalize_log({-1000.0, -1000.0 + std::log(3.0)});
  CHECK(d[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("divergences") {
  CHECK(kl({0.5, 0.5}, {0.5, 0.5}) == 0.0);
  CHECK(kl({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(kl({0.5, 0.5}, {1.0, 0.0}), Error);
  CHECK_THROWS_AS(tv({1.0}, {0.5, 0.5}), Error);
  CHECK(tv({0.2, 0.8}, {0.6, 0.4}) == doctest::Approx(0.4));
  CHECK(entropy({0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)));

  // Pinsker on random pairs
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    const int k = rng.range(2, 6);
    Dist p(k), q(k);
    double sp = 0, sq = 0;
    for (int j = 0; j < k; ++j) {
      sp += p[j] = rng.uniform() + 1e-6;
      sq += q[j] = rng.uniform() + 1e-6;
    }
    for (int j = 0; j < k; ++j) p[j] /= sp, q[j] /= sq;
    CHECK(tv(p, q) <= std::sqrt(0.5 * kl(p, q)) + 1e-12);
    CHECK(entropy(p) <= std::log(k) + 1e-12);
  }
}

TEST_CASE("composite posterior") {
  const WorldFile wf = load_world_file(fixtures::config_path("cot_k2.json"));
  REQUIRE(wf.cot);
  const CotWorld& cw = *wf.cot;
  const World& w = cw.base;
  const int x0 = w.vocab.id_of("x0"), p = w.vocab.id_of("p"), s = w.vocab.id_of("s");
  const CotPrompt pr = build_cot({{{x0}, {{p}, {s}}}}, w.vocab.delim, {x0}, w.n, w.vocab.pad);
  const Posterior post = composite_posterior(cw, pr);

  // prior mode: q(x | theta) mixes over the pretraining prior
  std::vector<double> want;
  double z = 0;
  for (std::size_t i = 0; i < cw.composites.size(); ++i) {
    const auto& st = cw.composites[i];
    double qx = 0;
    for (int t = 0; t < w.num_tasks(); ++t) qx += w.prior[t] * w.prob(t, Tokens{}, x0);
    double lik = qx * chain(w, st[0], {x0}, {p}) * chain(w, st[1], {x0, p}, {s});
    double qq = 0;
    for (int t = 0; t < w.num_tasks(); ++t) qq += w.prior[t] * chain(w, t, {x0, p, s, w.vocab.delim}, {x0});
    lik *= qq;
    want.push_back(cw.composite_prior[i] * lik);
    z += want.back();
  }
  REQUIRE(post.weights.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(post.weights[i] == doctest::Approx(want[i] / z).epsilon(1e-12));
}

TEST_CASE("one-step tied composites reduce to the atomic posterior") {
  int ran = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng = Rng::derive(seed, 2);
    WorldFamily fam;
    fam.max_content = 3;
    const World w = random_world(rng, fam);
    if (!w.markov() || w.n < 5) continue;
    ++ran;
    CotWorld cw;
    cw.base = w;
    cw.L = 1;
    for (int t = 0; t < w.num_tasks(); ++t) cw.composites.push_back({t});
    cw.composite_prior = w.prior;
    cw.query_mode = QueryTaskMode::Tied;
    cw.validate();
    const int c = w.vocab.content().front();
    const CotPrompt p = build_cot({{{c}, {{c}}}}, w.vocab.delim, {c}, w.n, w.vocab.pad);
    const Posterior cp = composite_posterior(cw, p);
    const Posterior ap = posterior(w, p.flat());
    for (int t = 0; t < w.num_tasks(); ++t) CHECK(cp.weights[t] == doctest::Approx(ap.weights[t]).epsilon(1e-10));
  }
  CHECK(ran >= 5);
}
