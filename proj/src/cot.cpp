#include "promptlab/cot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace promptlab {

namespace {

const double kLogSupportFloor = std::log(1e-300);

Dist restricted_posterior(const World& w, const std::vector<int>& cand, const Tokens& evidence) {
  std::vector<double> lw;
  lw.reserve(cand.size());
  for (int t : cand) lw.push_back(std::log(w.prior[t]) + seq_logprob(w, t, {}, evidence, true));
  return normalize_log(lw);
}

std::vector<int> all_tasks(const World& w) {
  std::vector<int> v(w.num_tasks());
  for (int i = 0; i < w.num_tasks(); ++i) v[i] = i;
  return v;
}

// ratio max/min among the positive entries
double parity(const Dist& p) {
  double lo = kInf, hi = 0;
  for (double v : p)
    if (v > 0) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  return hi > 0 ? hi / lo : 1.0;
}

}  // namespace

Dist CotWorld::query_dist(const std::vector<int>& steps, int ci) const {
  switch (query_mode) {
    case QueryTaskMode::Tied: {
      Dist d(base.num_tasks(), 0.0);
      d.at(steps.at(0)) = 1.0;
      return d;
    }
    case QueryTaskMode::Table:
      if (ci >= 0) return query_table.at(ci);
      return base.prior;
    case QueryTaskMode::Prior:
      break;
  }
  return base.prior;
}

double CotWorld::prior_of(const std::vector<int>& steps) const {
  for (std::size_t i = 0; i < composites.size(); ++i)
    if (composites[i] == steps) return composite_prior[i];
  return 0.0;
}

void CotWorld::validate() const {
  if (L < 1 || L > base.n) throw Error(ErrorKind::Config, "cot: L must lie in [1, n]");
  if (composites.empty()) throw Error(ErrorKind::Config, "cot: empty composite prior");
  if (composites.size() != composite_prior.size())
    throw Error(ErrorKind::Config, "cot: composite prior length mismatch");
  double s = 0;
  std::set<std::vector<int>> seen;
  for (std::size_t i = 0; i < composites.size(); ++i) {
    if (static_cast<int>(composites[i].size()) != L)
      throw Error(ErrorKind::Config, "cot: composite " + std::to_string(i) + " does not have L steps");
    for (int t : composites[i])
      if (t < 0 || t >= base.num_tasks())
        throw Error(ErrorKind::Config, "cot: composite " + std::to_string(i) + " references an unknown task");
    if (!seen.insert(composites[i]).second)
      throw Error(ErrorKind::Config, "cot: duplicate composite " + std::to_string(i));
    if (!(composite_prior[i] >= 0)) throw Error(ErrorKind::Config, "cot: negative composite prior");
    s += composite_prior[i];
  }
  if (std::fabs(s - 1.0) > 1e-12) throw Error(ErrorKind::Config, "cot: composite prior does not sum to 1");
  if (query_mode == QueryTaskMode::Table) {
    if (query_table.size() != composites.size())
      throw Error(ErrorKind::Config, "cot: query table needs one row per composite");
    for (const auto& r : query_table) {
      if (static_cast<int>(r.size()) != base.num_tasks())
        throw Error(ErrorKind::Config, "cot: query table row has wrong length");
      double rs = 0;
      for (double v : r) rs += v;
      if (std::fabs(rs - 1.0) > 1e-12) throw Error(ErrorKind::Config, "cot: query table row does not sum to 1");
    }
  }
  if (!step_worlds.empty() && static_cast<int>(step_worlds.size()) != L)
    throw Error(ErrorKind::Config, "cot: step worlds must be given for all L steps");
  auto same_shape = [&](const World& w) {
    if (w.vocab.size() != base.vocab.size() || w.num_tasks() != base.num_tasks() || w.n != base.n)
      throw Error(ErrorKind::Config, "cot: shifted world differs in structure from the base world");
  };
  for (const auto& w : step_worlds) same_shape(w);
  if (query_world) same_shape(*query_world);
}

double cot_loglik(const CotWorld& cw, const CotPrompt& p, const std::vector<int>& steps, int ci,
                  bool use_shift) {
  const World& in_w = use_shift ? cw.input_world() : cw.base;
  const Dist qd = cw.query_dist(steps, ci);
  Tokens h;
  double ll = 0.0;
  auto input_term = [&](const Tokens& x) {
    std::vector<double> terms;
    for (int t = 0; t < cw.base.num_tasks(); ++t)
      if (qd[t] > 0) terms.push_back(std::log(qd[t]) + seq_logprob(in_w, t, h, x, true));
    return logsumexp(terms);
  };
  for (const auto& d : p.demos) {
    if (static_cast<int>(d.steps.size()) != cw.L)
      throw Error(ErrorKind::Config, "cot prompt step count differs from L");
    ll += input_term(d.x);
    h.insert(h.end(), d.x.begin(), d.x.end());
    for (int j = 0; j < cw.L; ++j) {
      const World& sw = use_shift ? cw.step_world(j) : cw.base;
      ll += seq_logprob(sw, steps[j], h, d.steps[j], true);
      h.insert(h.end(), d.steps[j].begin(), d.steps[j].end());
    }
    h.push_back(p.delimiter);
  }
  ll += input_term(p.query);
  return ll;
}

Posterior composite_posterior(const CotWorld& cw, const CotPrompt& p) {
  Posterior post;
  std::vector<double> lw;
  for (std::size_t i = 0; i < cw.composites.size(); ++i) {
    if (!(cw.composite_prior[i] > 0)) continue;
    post.support.push_back(static_cast<int>(i));
    lw.push_back(std::log(cw.composite_prior[i]) +
                 cot_loglik(cw, p, cw.composites[i], static_cast<int>(i)));
  }
  post.weights = normalize_log(lw);
  return post;
}

double response_logprob(const CotWorld& cw, const Tokens& prefix, const Tokens& Y,
                        const std::vector<int>& step_len, const std::vector<int>& steps,
                        bool use_shift) {
  Tokens h = prefix;
  std::size_t pos = 0;
  double lp = 0.0;
  for (int j = 0; j < cw.L; ++j) {
    const int len = step_len.at(j);
    if (pos + len > Y.size()) throw Error(ErrorKind::Shape, "response shorter than its step layout");
    Tokens part(Y.begin() + pos, Y.begin() + pos + len);
    const World& sw = use_shift ? cw.step_world(j) : cw.base;
    lp += seq_logprob(sw, steps[j], h, part);
    if (lp == kNegInf) return lp;
    h.insert(h.end(), part.begin(), part.end());
    pos += len;
  }
  return lp;
}

int hamming(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Shape, "hamming: length mismatch");
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] != b[i]);
  return d;
}

std::vector<int> support_set(const CotWorld& cw, const CotPrompt& p) {
  std::vector<int> S;
  for (std::size_t i = 0; i < cw.composites.size(); ++i) {
    if (!(cw.composite_prior[i] > 0)) continue;
    if (cot_loglik(cw, p, cw.composites[i], static_cast<int>(i)) > kLogSupportFloor)
      S.push_back(static_cast<int>(i));
  }
  return S;
}

int k_separation(const CotWorld& cw, const CotPrompt& p) {
  const auto S = support_set(cw, p);
  if (S.empty()) throw Error(ErrorKind::ZeroEvidence, "k_separation: empty support");
  if (S.size() == 1) return cw.L + 1;
  int K = cw.L;
  for (std::size_t a = 0; a < S.size(); ++a)
    for (std::size_t b = a + 1; b < S.size(); ++b)
      K = std::min(K, hamming(cw.composites[S[a]], cw.composites[S[b]]));
  return K;
}

double prior_mismatch(const World& pre, const CotWorld& cw, const CotPrompt& p) {
  const int T = pre.num_tasks();
  if (std::pow(static_cast<double>(T), cw.L) > static_cast<double>(kEnumerationGuard))
    throw Error(ErrorKind::Guard, "prior_mismatch: |Theta|^L exceeds 1e6");
  std::map<std::vector<int>, int> index;
  for (std::size_t i = 0; i < cw.composites.size(); ++i) index[cw.composites[i]] = static_cast<int>(i);
  std::vector<int> cur(cw.L, 0);
  double delta = 0.0;
  while (true) {
    auto it = index.find(cur);
    const int ci = it == index.end() ? -1 : it->second;
    if (cot_loglik(cw, p, cur, ci) > kLogSupportFloor) {
      const double qt = ci >= 0 ? cw.composite_prior[ci] : 0.0;
      const bool stationary = std::all_of(cur.begin(), cur.end(), [&](int t) { return t == cur[0]; });
      const double qs = stationary ? pre.prior[cur[0]] : 0.0;
      delta += std::fabs(qt - qs);
    }
    int k = cw.L - 1;
    while (k >= 0 && ++cur[k] == T) cur[k--] = 0;
    if (k < 0) break;
  }
  return delta;
}

double M_recip(const World& pre, const CotWorld& cw, const CotPrompt& p) {
  const Tokens flat = p.flat();
  std::vector<double> a;
  for (int t = 0; t < pre.num_tasks(); ++t)
    a.push_back(std::log(pre.prior[t]) + seq_logprob(pre, t, {}, flat, true));
  std::vector<double> c;
  for (std::size_t i = 0; i < cw.composites.size(); ++i)
    if (cw.composite_prior[i] > 0)
      c.push_back(std::log(cw.composite_prior[i]) +
                  cot_loglik(cw, p, cw.composites[i], static_cast<int>(i)));
  return std::exp(std::max(-logsumexp(a), -logsumexp(c)));
}

double epsilon_cot(const World& w, const CotPrompt& p, const std::vector<std::vector<int>>& candidates) {
  const auto full = all_tasks(w);
  double eps = 0.0;
  for (const auto& d : p.demos) {
    Tokens ev = d.x;
    for (std::size_t j = 0; j < d.steps.size(); ++j) {
      ev.insert(ev.end(), d.steps[j].begin(), d.steps[j].end());
      const auto& cand = candidates.empty() ? full : candidates.at(j);
      const Dist post = restricted_posterior(w, cand, ev);
      const double a = 1.0 - *std::max_element(post.begin(), post.end());
      if (a >= 1.0) throw Error(ErrorKind::Domain, "epsilon_cot: step ambiguity is 1");
      eps = std::max(eps, a / (1.0 - a));
    }
  }
  return eps;
}

CotStepReport cot_step_analysis(const CotWorld& cw, const CotPrompt& p, const std::vector<int>& S) {
  const World& w = cw.base;
  CotStepReport r;
  if (S.empty()) throw Error(ErrorKind::ZeroEvidence, "cot: empty support set");
  r.candidates.resize(cw.L);
  for (int j = 0; j < cw.L; ++j) {
    std::set<int> c;
    for (int i : S) c.insert(cw.composites[i][j]);
    r.candidates[j].assign(c.begin(), c.end());
  }
  const auto full = all_tasks(w);

  double lo = kInf, hi = 0;
  for (int i : S) {
    lo = std::min(lo, cw.composite_prior[i]);
    hi = std::max(hi, cw.composite_prior[i]);
  }
  r.c1_global = hi / lo;

  for (const auto& d : p.demos) {
    std::vector<int> star;
    Tokens h = d.x;
    for (int j = 0; j < cw.L; ++j) {
      const auto& cand = r.candidates[j];
      r.c1_local = std::max(r.c1_local, parity(restricted_posterior(w, cand, h)));
      r.c1_local_full = std::max(r.c1_local_full, parity(restricted_posterior(w, full, h)));
      Tokens ev = h;
      ev.insert(ev.end(), d.steps[j].begin(), d.steps[j].end());
      const Dist post = restricted_posterior(w, cand, ev);
      // first maximizer = lowest task index (candidates are sorted)
      const auto best = std::max_element(post.begin(), post.end()) - post.begin();
      star.push_back(cand[best]);
      const double a = 1.0 - post[best];
      r.epsilon = std::max(r.epsilon, a < 1.0 ? a / (1.0 - a) : kInf);
      const Dist fpost = restricted_posterior(w, full, ev);
      const double af = 1.0 - *std::max_element(fpost.begin(), fpost.end());
      r.epsilon_full = std::max(r.epsilon_full, af < 1.0 ? af / (1.0 - af) : kInf);
      h = ev;
    }
    r.per_demo_star.push_back(star);
  }
  if (r.per_demo_star.empty()) {
    // no demonstrations: fall back to the prior mode over the support
    int best = S.front();
    for (int i : S)
      if (cw.composite_prior[i] > cw.composite_prior[best]) best = i;
    r.theta_star = cw.composites[best];
  } else {
    r.theta_star = r.per_demo_star.front();
    for (const auto& s : r.per_demo_star)
      if (s != r.theta_star) r.consistent = false;
    if (!r.consistent) r.theta_star.clear();
  }

  // c2: weakest input over demos and the query, each in its prompt position
  Tokens h;
  r.c2 = kInf;
  auto input_strength = [&](const Tokens& x) {
    double best = 0.0;
    for (int t = 0; t < w.num_tasks(); ++t) best = std::max(best, std::exp(seq_logprob(w, t, h, x, true)));
    r.c2 = std::min(r.c2, best);
  };
  for (const auto& d : p.demos) {
    input_strength(d.x);
    h.insert(h.end(), d.x.begin(), d.x.end());
    for (const auto& s : d.steps) h.insert(h.end(), s.begin(), s.end());
    h.push_back(p.delimiter);
  }
  input_strength(p.query);
  return r;
}

}  // namespace promptlab
