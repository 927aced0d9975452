#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "promptlab/bounds.hpp"
#include "promptlab/inference.hpp"

using namespace promptlab;

namespace {

World small_random(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0);
  WorldFamily fam;
  fam.max_content = 3;
  fam.max_n = 5;
  return random_world(rng, fam);
}

}  // namespace

TEST_CASE("concat and genuine length") {
  const int pad = 2;
  auto s = [&](Tokens t) { return Sequence::from_tokens(t, 6, pad); };
  CHECK(concat({s({4}), s({5})}) == s({4, 5}));
  CHECK(concat({s({}), s({4, 5})}) == s({4, 5}));
  CHECK(genuine_length(s({})) == 0);
  CHECK(genuine_length(s({4, 5})) == 2);
  CHECK(genuine_length(s({4, 5, 4, 5, 4, 5})) == 6);

  // demo parts with lengths summing to exactly the width
  for (int a = 0; a <= 6; ++a)
    for (int b = 0; a + b <= 6; ++b) {
      const Tokens x(a, 4), y(b, 5), q(6 - a - b, 3);
      const Sequence c = concat({s(x), s(y), s(q)});
      CHECK(c.genuine_length() == 6);
      CHECK(c.well_formed());
    }
  CHECK_THROWS_AS(concat({s({4, 4, 4, 4}), s({5, 5, 5})}), Error);
  CHECK_THROWS_AS(Sequence::from_tokens(Tokens{4, pad, 4}, 6, pad), Error);
}

TEST_CASE("sampling") {
  const World w = fixtures::world(fixtures::kTwoTask);
  Rng r1(11), r2(11);
  for (int i = 0; i < 20; ++i) CHECK(sample_document(w, 0, r1) == sample_document(w, 0, r2));

  // a task that stops at once
  World e = w;
  for (auto& t : e.tasks) {
    t.init.assign(w.vocab.size(), 0.0);
    t.init[w.vocab.eos] = 1.0;
  }
  e.b = 1e-9;
  e.floor_mode = "mix";
  e.finalize();
  Rng r3(5);
  const Sequence d = sample_document(e, 0, r3);
  CHECK(d.tokens().size() >= 1);

  // first-token frequencies: chi-square at the 0.001 level and 3 standard errors
  const int draws = 100000;
  Rng rng(2024);
  std::map<int, int> count;
  for (int i = 0; i < draws; ++i) ++count[sample_document(w, 0, rng).tokens().front()];
  const auto& E = w.vocab.emission();
  double chi2 = 0;
  for (int t : E) {
    const double p = w.row(0, Tokens{})[t];
    const double expct = p * draws;
    chi2 += (count[t] - expct) * (count[t] - expct) / expct;
    const double se = std::sqrt(p * (1 - p) / draws);
    CHECK(std::fabs(count[t] / double(draws) - p) <= 3 * se);
  }
  const double crit[] = {10.828, 13.816, 16.266, 18.467, 20.515};
  CHECK(chi2 < crit[E.size() - 2]);
}

TEST_CASE("deterministic emission") {
  World w = fixtures::world(fixtures::kTwoTask);
  for (auto& t : w.tasks) {
    t.init.assign(w.vocab.size(), 0.0);
    t.init[w.vocab.eos] = 1.0;
  }
  // bypass the floor check: rows are probabilities but the world is not finalized again
  Rng rng(1);
  const Sequence d = sample_document(w, 0, rng);
  CHECK(d.tokens() == Tokens{w.vocab.eos});
  CHECK(doc_likelihood(w, d, 0) == 1.0);
}

TEST_CASE("document likelihoods") {
  const World w = fixtures::world(fixtures::kTwoTask);
  const int a = w.vocab.id_of("a"), eos = w.vocab.eos;
  const Sequence d = Sequence::from_tokens(Tokens{a, a, eos}, w.n, w.vocab.pad);
  CHECK(doc_likelihood(w, d, 0) == doctest::Approx(0.9 * 0.5 * 0.1).epsilon(1e-14));
  CHECK(marginal_likelihood(w, d) ==
        doctest::Approx(0.5 * (0.9 * 0.5 * 0.1) + 0.5 * (0.1 * 0.5 * 0.4)).epsilon(1e-14));
  // the delimiter has probability 0 under a content task
  const Sequence bad = Sequence::from_tokens(Tokens{a, w.vocab.delim, eos}, w.n, w.vocab.pad);
  CHECK(doc_likelihood(w, bad, 0) == 0.0);

  // single-task world: marginal equals the task likelihood
  const World one = restrict_tasks(w, {1});
  CHECK(marginal_likelihood(one, d) == doctest::Approx(doc_likelihood(one, d, 0)).epsilon(1e-15));
}

TEST_CASE("total mass over enumerated documents") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const World w = small_random(seed);
    const auto docs = oracle::all_documents(w);
    std::vector<double> per(w.num_tasks(), 0.0);
    double total = 0;
    for (const auto& d : docs) {
      const Sequence s = Sequence::from_tokens(d, w.n, w.vocab.pad);
      for (int t = 0; t < w.num_tasks(); ++t) per[t] += doc_likelihood(w, s, t);
      total += marginal_likelihood(w, s);
    }
    for (double p : per) CHECK(p == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(total - 1.0) <= 1e-9);
    // the library enumeration finds exactly the positive-mass documents
    std::size_t positive = 0;
    for (const auto& d : docs) positive += marginal_likelihood(w, Sequence::from_tokens(d, w.n, w.vocab.pad)) > 0;
    CHECK(enumerate_documents(w).size() == positive);
  }
}

TEST_CASE("conditional probability") {
  const World w = fixtures::world(fixtures::kTwoTask);
  const int a = w.vocab.id_of("a"), b = w.vocab.id_of("b");
  CHECK(cond_prob(w, Tokens{}, Tokens{a}) == 1.0);
  CHECK(cond_prob(w, Tokens{b}, Tokens{a}, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(cond_prob(w, Tokens{a, a, a}, Tokens{a, a, a}), Error);

  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    const World r = small_random(seed);
    const auto prefixes = enumerate_prefixes(r);
    for (std::size_t i = 0; i < prefixes.size(); i += 3) {
      const Tokens& p = prefixes[i];
      for (std::size_t split = 0; split <= p.size(); ++split) {
        const Tokens x(p.begin(), p.begin() + split), y(p.begin() + split, p.end());
        const double c = cond_prob(r, y, x);
        CHECK(c == doctest::Approx(oracle::cond_ratio(r, y, x)).epsilon(1e-10));
        // law of total probability through the posterior
        const Posterior post = posterior(r, x);
        double mix = 0;
        for (int t = 0; t < r.num_tasks(); ++t) mix += post.weights[t] * cond_prob(r, y, x, t);
        CHECK(std::fabs(mix - c) <= 1e-12);
      }
    }
  }
}

TEST_CASE("history enumeration") {
  World w = fixtures::world(fixtures::kTwoTask);
  w.n = 1;
  w.finalize();
  const auto one = enumerate_histories(w);
  REQUIRE(one.size() == 1);
  CHECK(one[0].tokens() == Tokens{w.vocab.sos});

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const World r = small_random(seed);
    const auto hs = enumerate_histories(r);
    CHECK(static_cast<double>(hs.size()) <= std::pow(r.vocab.size(), r.n));
    const auto docs = oracle::all_documents(r);
    for (const auto& h : hs) {
      Tokens p = h.tokens();
      CHECK(p.front() == r.vocab.sos);
      p.erase(p.begin());
      double m = 0;
      for (int t = 0; t < r.num_tasks(); ++t) m += r.prior[t] * oracle::prefix_mass(r, docs, p, t);
      CHECK(m > 0);
    }
  }
}

TEST_CASE("normalization and floor on reachable histories") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const World w = small_random(seed);
    for (const auto& p : enumerate_prefixes(w))
      for (int t = 0; t < w.num_tasks(); ++t) {
        const Dist& row = w.row(t, p);
        double s = 0;
        for (double v : row) s += v;
        CHECK(std::fabs(s - 1.0) <= 1e-12);
        if (!w.at_cap(p))
          for (int e : w.vocab.emission()) CHECK(row[e] >= w.b);
      }
  }
}

TEST_CASE("floor mixing is applied once") {
  World w = small_random(3);
  const Dist before = w.row(0, Tokens{});
  World copy = w;
  copy.finalize();
  CHECK(copy.row(0, Tokens{}) == before);
}

TEST_CASE("table backend uses the longest stored suffix") {
  World w = fixtures::world(fixtures::kTwoTask);
  const int a = w.vocab.id_of("a"), b = w.vocab.id_of("b"), eos = w.vocab.eos;
  Task t;
  t.id = 5;
  t.backend = Backend::Table;
  Dist r0(w.vocab.size(), 0.0), r1(w.vocab.size(), 0.0);
  r0[a] = 0.6, r0[b] = 0.3, r0[eos] = 0.1;
  r1[a] = 0.1, r1[b] = 0.1, r1[eos] = 0.8;
  t.table[0] = r0;
  t.table[w.prefix_key(Tokens{b})] = r1;
  w.tasks.push_back(t);
  w.prior = {0.25, 0.25, 0.5};
  w.finalize();
  CHECK(w.row(2, Tokens{a})[eos] == 0.1);
  CHECK(w.row(2, Tokens{a, b})[eos] == 0.8);
  CHECK(w.row(2, Tokens{b, a})[eos] == 0.1);
}

TEST_CASE("loader reports the offending path") {
  auto msg = [](const std::string& text) {
    try {
      parse_world_file(text, "w");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
      return std::string(e.what());
    }
    return std::string("no error");
  };
  std::string bad = fixtures::kTwoTask;
  bad.replace(bad.find("\"n\": 5"), 6, "\"n\": \"x\"");
  CHECK(msg(bad).find("w.n") != std::string::npos);

  std::string sum = fixtures::kTwoTask;
  sum.replace(sum.find("\"a\": 0.9"), 8, "\"a\": 0.8");
  CHECK(msg(sum).find("does not sum to 1") != std::string::npos);

  std::string floor = fixtures::kTwoTask;
  floor.replace(floor.find("\"b\": 0.05"), 9, "\"b\": 0.2");
  CHECK(msg(floor).find("below the floor") != std::string::npos);

  std::string tok = fixtures::kTwoTask;
  tok.replace(tok.find("\"matrix\": {\"a\""), 14, "\"matrix\": {\"z\"");
  CHECK(msg(tok).find("w.tasks[0].matrix.z") != std::string::npos);

  CHECK_THROWS_AS(load_world_file("/nonexistent/world.json"), Error);
}
