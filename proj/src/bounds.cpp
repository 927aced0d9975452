#include "promptlab/bounds.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace promptlab {

namespace {

double finite_or_inf(double x) { return std::isnan(x) ? kInf : x; }

// Runs f(0..count-1) on up to `parallel` threads. Each cell writes its own slot,
// so results do not depend on the schedule. The exception of the lowest failing
// cell is rethrown.
void run_cells(int count, int parallel, const std::function<void(int)>& f) {
  std::vector<std::exception_ptr> errs(count);
  auto guarded = [&](int i) {
    try {
      f(i);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  };
  const int workers = std::max(1, std::min(parallel, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) guarded(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int k = 0; k < workers; ++k)
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++) guarded(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

int max_len(const std::vector<Tokens>& ys) {
  std::size_t r = 0;
  for (const auto& y : ys) r = std::max(r, y.size());
  return static_cast<int>(r);
}

// max_y |sum_theta q(theta | ctx) q(y | ctx, theta) - q(y | query, theta_x)|
double icl_measured(const World& w, const Tokens& ctx, const Tokens& query, int theta_x,
                    const std::vector<Tokens>& y_set, const Posterior& post) {
  double worst = 0.0;
  for (const auto& y : y_set) {
    if (ctx.size() + y.size() > static_cast<std::size_t>(w.n))
      throw Error(ErrorKind::Overflow, "prompt plus response exceeds n");
    double mix = 0.0;
    for (std::size_t i = 0; i < post.support.size(); ++i)
      if (post.weights[i] > 0) mix += post.weights[i] * std::exp(seq_logprob(w, post.support[i], ctx, y));
    const double ref = std::exp(seq_logprob(w, theta_x, query, y));
    worst = std::max(worst, std::fabs(mix - ref));
  }
  return worst;
}

template <class T>
std::vector<T> take_cycled(const std::vector<T>& v, int m) {
  if (m > 0 && v.empty()) throw Error(ErrorKind::Config, "sweep needs at least one demonstration");
  std::vector<T> out;
  for (int i = 0; i < m; ++i) out.push_back(v[i % v.size()]);
  return out;
}

// the response must fit behind the prompt
void check_room(int prompt_len, int r, int n, int m) {
  if (prompt_len + r > n)
    throw Error(ErrorKind::Overflow, "m=" + std::to_string(m) + ": prompt of length " + std::to_string(prompt_len) +
                                         " leaves no room for a response of length " + std::to_string(r) +
                                         " (n=" + std::to_string(n) + ")");
}

void finish(BoundReport& r, double rhs_total) {
  r.rhs_total = rhs_total;
  r.slack = rhs_total - r.measured;
}

}  // namespace

double component(const Components& cs, const std::string& label) {
  for (const auto& c : cs)
    if (c.label == label) return c.value;
  throw Error(ErrorKind::Domain, "no bound component '" + label + "'");
}

// ---------------------------------------------------------------- calculators

Components rhs_pretraining(const BoundInputs& in) {
  const double V = in.V_size, n = in.n, Nn = in.N * in.n, d = in.d, M = in.M;
  const double q4 = std::pow(Nn, 0.25);
  const double poly = finite_or_inf(std::pow(V, n + 2) / q4);
  const double conc = finite_or_inf(std::sqrt(std::log(1.0 / in.delta) / Nn));
  const double app = finite_or_inf(V * V * M / q4);
  const double rad = finite_or_inf(std::sqrt(V * d * d * (d + M) * (n * n + d * n + V * d + V * M)) *
                                   std::log(Nn) / std::sqrt(Nn));
  const double main = finite_or_inf(poly + conc);
  return {{"main_poly", poly},
          {"main_conc", conc},
          {"main", main},
          {"appendix", finite_or_inf(app + conc)},
          {"rademacher", rad},
          {"response_main", finite_or_inf(in.r * main)}};
}

namespace {

double stat_term(const BoundInputs& in) {
  if (in.N <= 0) return 0.0;
  return component(rhs_pretraining(in), "response_main");
}

}  // namespace

Components rhs_icl(const BoundInputs& in) {
  const double rphi = in.r * in.phi;
  const double ratio = std::exp(2.0 * in.n * in.phi) * in.c * in.epsilon;
  // 0^0 = 1 keeps the zero-shot row equal to the ambiguity
  const double decay = std::pow(ratio, in.m) * in.ambiguity;
  return {{"stat", stat_term(in)},
          {"rphi", rphi},
          {"rphi_exact", std::expm1(rphi)},
          {"decay", finite_or_inf(decay)}};
}

Components rhs_cot(const BoundInputs& in, bool shifted) {
  const double rphi = in.r * in.phi;
  double mismatch = in.M_recip * in.delta_mismatch;
  if (shifted)
    mismatch = 2.0 * in.n * in.phi + 3.0 * in.m * in.M_recip * (in.varphi + in.delta_mismatch);
  double C = 0.0, decay = 0.0;
  if (in.K <= in.L) {
    if (in.c1 * in.epsilon >= 1.0)
      throw Error(ErrorKind::Divergence, "c1 * eps = " + fmt_double(in.c1 * in.epsilon) + " >= 1");
    C = in.c1 * std::exp(2.0 * in.n * (in.L - in.K) * in.phi) * std::pow(in.c2, -(in.m + 1)) /
        (1.0 - in.c1 * in.epsilon);
    const double ratio = std::exp(2.0 * in.n * in.phi) * in.c1 * in.epsilon;
    decay = C * std::pow(ratio, static_cast<double>(in.m) * in.K);
  }
  return {{"stat", stat_term(in)},         {"rphi", rphi},
          {"rphi_exact", std::expm1(rphi)}, {"mismatch", finite_or_inf(mismatch)},
          {"C", finite_or_inf(C)},          {"decay", finite_or_inf(decay)}};
}

// ---------------------------------------------------------------- responses

std::vector<Tokens> response_set(const World& w, int r, std::size_t cap) {
  std::vector<Tokens> out;
  if (r <= 0) return out;
  const auto& E = w.vocab.emission();
  const auto& C = w.vocab.content();
  Tokens cur;
  std::function<void()> rec = [&]() {
    if (out.size() >= cap) return;
    if (static_cast<int>(cur.size()) == r - 1) {
      for (int t : E) {
        if (out.size() >= cap) return;
        cur.push_back(t);
        out.push_back(cur);
        cur.pop_back();
      }
      return;
    }
    for (int t : C) {
      cur.push_back(t);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

// ---------------------------------------------------------------- zero-shot / ICL

BoundReport run_zero_shot(const World& w, const Tokens& x, const std::vector<Tokens>& y_set) {
  const Posterior post = posterior(w, x);
  const AmbiguityReport a = summarize(post);
  BoundReport r;
  r.run_id = "zero-shot";
  r.in.V_size = w.vocab.size();
  r.in.n = w.n;
  r.in.r = max_len(y_set);
  r.in.ambiguity = a.ambiguity;
  r.measured = icl_measured(w, x, x, a.dominated_task, y_set, post);
  r.rhs = {{"stat", 0.0}, {"rphi", 0.0}, {"rphi_exact", 0.0}, {"decay", a.ambiguity}};
  r.extra["theta_x"] = a.dominated_task;
  r.extra["posterior_concentration"] = 1.0 - a.ambiguity;
  finish(r, a.ambiguity);
  return r;
}

std::vector<BoundReport> run_icl_sweep(const World& w, const IclConfig& cfg, int m_lo, int m_hi,
                                       int parallel) {
  if (m_lo < 0 || m_hi < m_lo) throw Error(ErrorKind::Config, "invalid m range");
  if (cfg.delimiter != w.vocab.delim)
    throw AssumptionViolation("Tasks of Delimiter",
                              "prompt delimiter is not the world's reserved delimiter token");
  if (cfg.y_set.empty()) throw Error(ErrorKind::Config, "empty response set");
  const double phi = estimate_phi(w, w.n);
  const double c = prior_imbalance(w);
  if (!std::isfinite(phi)) throw AssumptionViolation("Nearly Markov", "phi is infinite");
  if (!std::isfinite(c)) throw AssumptionViolation("Imbalance Prior", "prior ratio is infinite");

  const AmbiguityReport qa = ambiguity(w, cfg.query);
  const int count = m_hi - m_lo + 1;
  std::vector<BoundReport> rows(count);
  run_cells(count, parallel, [&](int cell) {
    const int m = m_lo + cell;
    const IclPrompt p = build_icl(take_cycled(cfg.demos, m), cfg.delimiter, cfg.query, w.n, w.vocab.pad);
    check_room(static_cast<int>(p.flat().size()), max_len(cfg.y_set), w.n, m);
    for (int i = 0; i < p.m(); ++i) {
      Tokens xy = p.demos[i].x;
      xy.insert(xy.end(), p.demos[i].y.begin(), p.demos[i].y.end());
      const int t = ambiguity(w, xy).dominated_task;
      if (t != qa.dominated_task)
        throw AssumptionViolation("Task Consistency",
                                  "demo " + std::to_string(i) + " is dominated by task " +
                                      std::to_string(w.tasks[t].id) + ", the query by task " +
                                      std::to_string(w.tasks[qa.dominated_task].id));
    }
    EpsilonIcl eps;
    try {
      eps = epsilon_icl_detail(w, p);
    } catch (const Error& e) {
      throw AssumptionViolation("Task Consistency", e.what());
    }
    const Tokens flat = p.flat();
    const Posterior post = posterior(w, flat);

    BoundReport& r = rows[cell];
    r.run_id = cfg.run_id;
    r.in.V_size = w.vocab.size();
    r.in.n = w.n;
    r.in.r = max_len(cfg.y_set);
    r.in.m = m;
    r.in.phi = phi;
    r.in.c = c;
    r.in.c1 = c;
    r.in.epsilon = eps.epsilon;
    r.in.ambiguity = eps.query_ambiguity;
    r.measured = icl_measured(w, flat, cfg.query, qa.dominated_task, cfg.y_set, post);
    r.rhs = rhs_icl(r.in);
    finish(r, component(r.rhs, "rphi_exact") + component(r.rhs, "decay"));
    r.extra["theta_x"] = qa.dominated_task;
    r.extra["posterior_concentration"] = post.weights[qa.dominated_task];
    r.extra["rhs_rphi_linear"] = component(r.rhs, "rphi");
    r.extra["prompt_length"] = static_cast<double>(flat.size());
  });
  return rows;
}

// ---------------------------------------------------------------- CoT

std::vector<BoundReport> run_cot_sweep(const World& pre, const CotWorld& cw, const CotConfig& cfg,
                                       int m_lo, int m_hi, int parallel) {
  if (m_lo < 0 || m_hi < m_lo) throw Error(ErrorKind::Config, "invalid m range");
  cw.validate();
  if (cfg.delimiter != pre.vocab.delim)
    throw AssumptionViolation("Tasks of Delimiter",
                              "prompt delimiter is not the world's reserved delimiter token");
  if (static_cast<int>(cfg.step_len.size()) != cw.L)
    throw Error(ErrorKind::Config, "step_len must give one length per step");
  int total = 0;
  for (int l : cfg.step_len) {
    if (l < 1) throw Error(ErrorKind::Config, "step lengths must be >= 1");
    total += l;
  }
  if (cfg.y_set.empty()) throw Error(ErrorKind::Config, "empty response set");
  for (const auto& y : cfg.y_set)
    if (static_cast<int>(y.size()) != total)
      throw Error(ErrorKind::Config, "response length differs from the step layout");

  const double phi = estimate_phi(pre, pre.n);
  if (!std::isfinite(phi)) throw AssumptionViolation("Nearly Markov", "phi is infinite");
  double varphi = 0.0;
  for (int j = 0; j < static_cast<int>(cw.step_worlds.size()); ++j)
    varphi = std::max(varphi, estimate_varphi(pre, cw.step_world(j)));
  if (cw.query_world) varphi = std::max(varphi, estimate_varphi(pre, *cw.query_world));
  const double c = prior_imbalance(pre);

  const int count = m_hi - m_lo + 1;
  std::vector<BoundReport> rows(count);
  run_cells(count, parallel, [&](int cell) {
    const int m = m_lo + cell;
    const CotPrompt p = build_cot(take_cycled(cfg.demos, m), cfg.delimiter, cfg.query, pre.n, pre.vocab.pad);
    check_room(static_cast<int>(p.flat().size()), total, pre.n, m);
    for (const auto& d : p.demos)
      for (int j = 0; j < cw.L; ++j)
        if (static_cast<int>(d.steps.at(j).size()) != cfg.step_len[j])
          throw Error(ErrorKind::Config, "demo step lengths differ from step_len");
    const auto S = support_set(cw, p);
    if (S.empty()) throw Error(ErrorKind::ZeroEvidence, "cot: no composite explains the prompt");
    int K = cw.L + 1;
    for (std::size_t a = 0; a < S.size(); ++a)
      for (std::size_t b = a + 1; b < S.size(); ++b)
        K = std::min(K, hamming(cw.composites[S[a]], cw.composites[S[b]]));
    const CotStepReport st = cot_step_analysis(cw, p, S);
    if (!st.consistent)
      throw AssumptionViolation("Task Consistency",
                                "step-wise dominated tasks differ between demonstrations");
    bool star_in_s = false;
    for (int i : S) star_in_s |= cw.composites[i] == st.theta_star;
    if (!star_in_s)
      throw AssumptionViolation("K-separation", "dominated composite lies outside the support set");
    if (!(st.c2 > 0) || !std::isfinite(st.c1()))
      throw AssumptionViolation("Regularity", "c1 or c2 is degenerate");

    BoundReport& r = rows[cell];
    r.run_id = cfg.run_id;
    r.in.V_size = pre.vocab.size();
    r.in.n = pre.n;
    r.in.r = total;
    r.in.m = m;
    r.in.K = K;
    r.in.L = cw.L;
    r.in.phi = phi;
    r.in.varphi = varphi;
    r.in.c = c;
    r.in.c1 = st.c1();
    r.in.c2 = st.c2;
    r.in.epsilon = st.epsilon;
    r.in.delta_mismatch = prior_mismatch(pre, cw, p);
    r.in.M_recip = M_recip(pre, cw, p);
    r.in.ambiguity = ambiguity(pre, cfg.query).ambiguity;
    try {
      r.rhs = rhs_cot(r.in, cw.shifted());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Divergence) throw AssumptionViolation("Regularity", e.what());
      throw;
    }

    const Tokens flat = p.flat();
    const Posterior post = composite_posterior(cw, p);
    double worst = 0.0;
    for (const auto& Y : cfg.y_set) {
      double mix = 0.0;
      for (std::size_t i = 0; i < post.support.size(); ++i)
        if (post.weights[i] > 0)
          mix += post.weights[i] * std::exp(response_logprob(cw, flat, Y, cfg.step_len,
                                                             cw.composites[post.support[i]], true));
      const double ref = std::exp(response_logprob(cw, cfg.query, Y, cfg.step_len, st.theta_star, true));
      worst = std::max(worst, std::fabs(mix - ref));
    }
    r.measured = worst;
    const double tight = component(r.rhs, "rphi_exact") + component(r.rhs, "decay");
    finish(r, tight + component(r.rhs, "mismatch"));
    r.extra["slack_no_mismatch"] = tight - r.measured;
    r.extra["support_size"] = static_cast<double>(S.size());
    r.extra["epsilon_full"] = st.epsilon_full;
    r.extra["c1_global"] = st.c1_global;
    r.extra["c1_local"] = st.c1_local;
    r.extra["c1_local_full"] = st.c1_local_full;
    r.extra["rhs_rphi_linear"] = component(r.rhs, "rphi");
    r.extra["C"] = component(r.rhs, "C");
    double conc = 0.0;
    for (std::size_t i = 0; i < post.support.size(); ++i)
      if (cw.composites[post.support[i]] == st.theta_star) conc = post.weights[i];
    r.extra["posterior_concentration"] = conc;
  });
  return rows;
}

// ---------------------------------------------------------------- propositions

World random_world(Rng& rng, const WorldFamily& fam) {
  World w;
  const int C = rng.range(1, fam.max_content);
  const int T = rng.range(1, fam.max_tasks);
  w.n = rng.range(2, fam.max_n);
  auto add = [&](const std::string& name, Role role) {
    w.vocab.names.push_back(name);
    w.vocab.roles.push_back(role);
  };
  add("<sos>", Role::Sos);
  add("<eos>", Role::Eos);
  add("<pad>", Role::Pad);
  add("<delim>", Role::Delim);
  for (int i = 0; i < C; ++i) add("t" + std::to_string(i), Role::Content);
  const int V = w.vocab.size();
  // non-PAD tokens evenly on the unit circle; PAD at the origin
  const double step = 2.0 * M_PI / (V - 1);
  int k = 0;
  for (int i = 0; i < V; ++i) {
    if (w.vocab.roles[i] == Role::Pad) {
      w.vocab.emb.push_back({0.0, 0.0});
    } else {
      w.vocab.emb.push_back({std::cos(step * k), std::sin(step * k)});
      ++k;
    }
  }
  w.vocab.alpha = 1.0;
  w.vocab.beta = 0.99 * std::min(1.0, 2.0 * std::sin(M_PI / (V - 1)));

  const auto E = [&] {
    std::vector<int> e;
    for (int i = 0; i < V; ++i)
      if (w.vocab.roles[i] == Role::Content || w.vocab.roles[i] == Role::Eos) e.push_back(i);
    return e;
  }();
  w.b = rng.uniform(1e-3, 0.05) / static_cast<double>(E.size());
  w.floor_mode = "mix";
  const double sharp = rng.uniform() < 0.5 ? 1.0 : 4.0;
  auto random_row = [&] {
    Dist r(V, 0.0);
    double s = 0;
    for (int t : E) {
      r[t] = std::pow(rng.uniform(1e-6, 1.0), sharp);
      s += r[t];
    }
    for (int t : E) r[t] /= s;
    return r;
  };
  const bool table = rng.uniform() < 0.5;
  for (int ti = 0; ti < T; ++ti) {
    Task t;
    t.id = ti;
    // occasionally duplicate an earlier task to exercise ties
    if (ti > 0 && rng.uniform() < 0.15) {
      t = w.tasks[rng.range(0, ti - 1)];
      t.id = ti;
      w.tasks.push_back(t);
      continue;
    }
    if (table) {
      t.backend = Backend::Table;
      Tokens cur;
      std::function<void()> rec = [&]() {
        t.table[w.prefix_key(cur)] = random_row();
        if (static_cast<int>(cur.size()) >= w.n - 2) return;
        for (int c = 4; c < V; ++c) {
          cur.push_back(c);
          rec();
          cur.pop_back();
        }
      };
      rec();
    } else {
      t.backend = Backend::Markov;
      t.init = random_row();
      t.rows.assign(V, Dist{});
      for (int c = 4; c < V; ++c) t.rows[c] = random_row();
    }
    w.tasks.push_back(std::move(t));
  }
  double ps = 0;
  for (int ti = 0; ti < T; ++ti) {
    w.prior.push_back(rng.uniform(0.05, 1.0));
    ps += w.prior.back();
  }
  for (auto& p : w.prior) p /= ps;
  // absorb rounding so the prior sums to 1 within 1e-12
  double s2 = 0;
  for (int ti = 1; ti < T; ++ti) s2 += w.prior[ti];
  w.prior[0] = 1.0 - s2;
  w.finalize();
  return w;
}

namespace {

void record(long& checks, long& viol, double& worst, double margin, double tol) {
  ++checks;
  worst = std::min(worst, margin);
  if (margin < -tol) ++viol;
}

// all x2 with l(x2) <= depth stopping at EOS, and their probability under
// q(. | ctx) given the posterior at ctx
void continuations(const World& w, const Tokens& ctx, int depth, std::vector<Tokens>& out) {
  Tokens cur;
  std::function<void()> rec = [&]() {
    for (int t : w.vocab.emission()) {
      cur.push_back(t);
      Tokens full = ctx;
      full.insert(full.end(), cur.begin(), cur.end());
      if (t == w.vocab.eos || static_cast<int>(cur.size()) == depth ||
          static_cast<int>(full.size()) >= w.n)
        out.push_back(cur);
      else
        rec();
      cur.pop_back();
    }
  };
  rec();
}

}  // namespace

PropositionReport verify_propositions(const WorldFamily& fam, int trials, std::uint64_t seed) {
  PropositionReport rep;
  rep.trials = trials;
  const double tol = fam.tolerance;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(trial));
    const World w = random_world(rng, fam);
    const int T = w.num_tasks();
    const auto prefixes = enumerate_prefixes(w);

    for (const auto& x : prefixes) {
      if (x.empty()) continue;
      const Posterior post = posterior(w, x);
      const AmbiguityReport a = summarize(post);
      // entropy bound
      record(rep.checks_entropy, rep.violations_entropy, rep.worst_entropy,
             (1.0 - std::exp(-a.entropy)) - a.ambiguity, tol);
      // monotonicity over every nested pair of task subsets
      const int full = (1 << T) - 1;
      std::vector<double> amb(full + 1, 1.0);
      for (int mask = 1; mask <= full; ++mask) {
        std::vector<int> sub;
        for (int t = 0; t < T; ++t)
          if (mask >> t & 1) sub.push_back(t);
        amb[mask] = ambiguity_over(post, sub);
      }
      for (int m2 = 1; m2 <= full; ++m2)
        for (int m1 = m2; m1 > 0; m1 = (m1 - 1) & m2)
          record(rep.checks_monotonicity, rep.violations_monotonicity, rep.worst_monotonicity,
                 amb[m1] - amb[m2], tol);
    }

    // expected contraction on a sample of (h, x1) splits
    const int samples = std::min<int>(12, static_cast<int>(prefixes.size()));
    for (int s = 0; s < samples; ++s) {
      const Tokens& hx = prefixes[rng.range(0, static_cast<int>(prefixes.size()) - 1)];
      if (hx.empty()) continue;
      const int split = rng.range(0, static_cast<int>(hx.size()) - 1);
      const Tokens h(hx.begin(), hx.begin() + split), x1(hx.begin() + split, hx.end());
      const Posterior p1 = posterior(w, x1, h);
      const AmbiguityReport a1 = summarize(p1);
      std::vector<Tokens> x2s;
      continuations(w, hx, 2, x2s);
      double expect = 0.0, mass = 0.0;
      for (const auto& x2 : x2s) {
        std::vector<double> lik(T);
        double q = 0.0;
        for (int t = 0; t < T; ++t) {
          lik[t] = std::exp(seq_logprob(w, t, hx, x2));
          q += p1.weights[t] * lik[t];
        }
        if (q <= 0) continue;
        Tokens x12 = x1;
        x12.insert(x12.end(), x2.begin(), x2.end());
        const AmbiguityReport a12 = ambiguity(w, x12, h);
        expect += q * a12.ambiguity;
        mass += q;
        ++rep.conditional_cases;
        // conditional case: same dominated task whose likelihood dominates
        bool premise = a12.dominated_task == a1.dominated_task;
        for (int t = 0; t < T && premise; ++t) premise = lik[a1.dominated_task] >= lik[t];
        if (premise) {
          ++rep.premise_held;
          record(rep.checks_conditional, rep.violations_conditional, rep.worst_conditional,
                 a1.ambiguity - a12.ambiguity, tol);
        }
      }
      if (std::fabs(mass - 1.0) > 1e-9)
        throw Error(ErrorKind::Domain, "continuation mass " + fmt_double(mass) + " != 1");
      record(rep.checks_contraction, rep.violations_contraction, rep.worst_contraction,
             a1.ambiguity - expect, tol);
    }

    // Pinsker on random pairs, p sometimes with zeros
    for (int k = 0; k < 2; ++k) {
      const int dim = rng.range(2, 6);
      Dist p(dim), q(dim);
      double sp = 0, sq = 0;
      for (int i = 0; i < dim; ++i) {
        p[i] = rng.uniform() < 0.2 ? 0.0 : std::pow(rng.uniform(), 3.0);
        q[i] = rng.uniform(1e-9, 1.0);
        sp += p[i];
        sq += q[i];
      }
      if (sp == 0) p[0] = sp = 1.0;
      for (int i = 0; i < dim; ++i) {
        p[i] /= sp;
        q[i] /= sq;
      }
      record(rep.checks_pinsker, rep.violations_pinsker, rep.worst_pinsker,
             std::sqrt(kl(p, q) / 2.0) - tv(p, q), tol);
    }
  }
  return rep;
}

// ---------------------------------------------------------------- output

std::string bounds_csv(const std::vector<BoundReport>& rows) {
  std::ostringstream os;
  os << "run_id,m,K,L,phi,varphi,c,c1,c2,epsilon,delta_mismatch,M_recip,ambiguity,measured,"
        "rhs_stat,rhs_rphi,rhs_mismatch,rhs_decay,rhs_total,slack\n";
  auto opt = [](const Components& cs, const char* label) {
    for (const auto& c : cs)
      if (c.label == label) return c.value;
    return 0.0;
  };
  for (const auto& r : rows) {
    const auto& in = r.in;
    os << r.run_id << ',' << in.m << ',' << in.K << ',' << in.L;
    for (double v : {in.phi, in.varphi, in.c, in.c1, in.c2, in.epsilon, in.delta_mismatch, in.M_recip,
                     in.ambiguity, r.measured, opt(r.rhs, "stat"), opt(r.rhs, "rphi_exact"),
                     opt(r.rhs, "mismatch"), opt(r.rhs, "decay"), r.rhs_total, r.slack})
      os << ',' << fmt_double(v);
    os << '\n';
  }
  return os.str();
}

namespace {

// JSON has no inf/nan; such values are written as strings
nlohmann::ordered_json num(double v) {
  if (std::isfinite(v)) return v;
  return fmt_double(v);
}

}  // namespace

std::string report_json(const BoundReport& r) {
  nlohmann::ordered_json j;
  j["run_id"] = r.run_id;
  const auto& in = r.in;
  j["inputs"] = {{"V_size", in.V_size}, {"n", in.n},         {"N", num(in.N)},
                 {"d", in.d},           {"M", num(in.M)},    {"r", in.r},
                 {"delta", num(in.delta)}, {"m", in.m},      {"K", in.K},
                 {"L", in.L},           {"phi", num(in.phi)}, {"varphi", num(in.varphi)},
                 {"c", num(in.c)},      {"c1", num(in.c1)},   {"c2", num(in.c2)},
                 {"epsilon", num(in.epsilon)}, {"delta_mismatch", num(in.delta_mismatch)},
                 {"M_recip", num(in.M_recip)}, {"ambiguity", num(in.ambiguity)}};
  j["measured"] = num(r.measured);
  nlohmann::ordered_json rhs = nlohmann::ordered_json::object();
  for (const auto& c : r.rhs) rhs[c.label] = num(c.value);
  j["rhs"] = rhs;
  j["rhs_total"] = num(r.rhs_total);
  j["slack"] = num(r.slack);
  nlohmann::ordered_json ex = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.extra) ex[k] = num(v);
  j["extra"] = ex;
  return j.dump(2);
}

std::string propositions_json(const PropositionReport& r) {
  nlohmann::ordered_json j;
  j["trials"] = r.trials;
  auto block = [&](long checks, long viol, double worst) {
    return nlohmann::ordered_json{{"checks", checks}, {"violations", viol}, {"worst_margin", num(worst)}};
  };
  j["monotonicity"] = block(r.checks_monotonicity, r.violations_monotonicity, r.worst_monotonicity);
  j["contraction"] = block(r.checks_contraction, r.violations_contraction, r.worst_contraction);
  j["entropy"] = block(r.checks_entropy, r.violations_entropy, r.worst_entropy);
  j["pinsker"] = block(r.checks_pinsker, r.violations_pinsker, r.worst_pinsker);
  j["conditional"] = block(r.checks_conditional, r.violations_conditional, r.worst_conditional);
  j["conditional"]["premise_held"] = r.premise_held;
  j["conditional"]["cases"] = r.conditional_cases;
  j["violations"] = r.violations();
  return j.dump(2);
}

}  // namespace promptlab
