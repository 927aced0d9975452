#include "promptlab/inference.hpp"

#include <algorithm>
#include <cmath>

namespace promptlab {

namespace {

Tokens strip_sos(const World& w, const Sequence& s) {
  Tokens t = s.tokens();
  if (!t.empty() && t.front() == w.vocab.sos) t.erase(t.begin());
  return t;
}

}  // namespace

Dist normalize_log(const std::vector<double>& logw) {
  const double z = logsumexp(logw);
  if (z == kNegInf) throw Error(ErrorKind::ZeroEvidence, "all likelihoods are zero");
  Dist out(logw.size());
  for (std::size_t i = 0; i < logw.size(); ++i) out[i] = std::exp(logw[i] - z);
  return out;
}

Posterior posterior(const World& w, std::span<const int> x, std::span<const int> history) {
  if (static_cast<int>(x.size() + history.size()) > w.n)
    throw Error(ErrorKind::Overflow, "posterior: l(history)+l(x) exceeds n");
  // the history is evidence as well: weights follow q(theta | SOS o h o x)
  Tokens hx(history.begin(), history.end());
  hx.insert(hx.end(), x.begin(), x.end());
  const int T = w.num_tasks();
  std::vector<double> lw(T);
  for (int i = 0; i < T; ++i) lw[i] = std::log(w.prior[i]) + seq_logprob(w, i, {}, hx, true);
  Posterior p;
  p.weights = normalize_log(lw);
  p.support.resize(T);
  for (int i = 0; i < T; ++i) p.support[i] = i;
  return p;
}

Posterior posterior(const World& w, const Sequence& x) {
  const Tokens xt = x.tokens();
  return posterior(w, xt);
}

Posterior posterior(const World& w, const Sequence& x, const Sequence& history) {
  const Tokens xt = x.tokens(), ht = strip_sos(w, history);
  return posterior(w, xt, ht);
}

AmbiguityReport summarize(const Posterior& p) {
  if (p.weights.empty()) throw Error(ErrorKind::Shape, "empty posterior");
  std::size_t best = 0;
  // strict '>' keeps the first (lowest index) maximizer
  for (std::size_t i = 1; i < p.weights.size(); ++i)
    if (p.weights[i] > p.weights[best]) best = i;
  AmbiguityReport r;
  r.dominated_task = p.support[best];
  r.ambiguity = 1.0 - p.weights[best];
  r.entropy = entropy(p.weights);
  return r;
}

AmbiguityReport ambiguity(const World& w, std::span<const int> x, std::span<const int> history) {
  return summarize(posterior(w, x, history));
}

AmbiguityReport ambiguity(const World& w, const Sequence& x) { return summarize(posterior(w, x)); }

AmbiguityReport ambiguity(const World& w, const Sequence& x, const Sequence& history) {
  return summarize(posterior(w, x, history));
}

double ambiguity_over(const Posterior& p, const std::vector<int>& subset) {
  if (subset.empty()) throw Error(ErrorKind::Domain, "ambiguity_over: empty task subset");
  double best = 0.0;
  for (int t : subset) {
    auto it = std::find(p.support.begin(), p.support.end(), t);
    if (it == p.support.end()) throw Error(ErrorKind::Domain, "ambiguity_over: task outside the support");
    best = std::max(best, p.weights[it - p.support.begin()]);
  }
  return 1.0 - best;
}

double entropy(const Dist& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

double kl(const Dist& p, const Dist& q) {
  if (p.size() != q.size()) throw Error(ErrorKind::Shape, "kl: support mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) throw Error(ErrorKind::Domain, "kl: q vanishes where p is positive");
    s += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(s, 0.0);
}

double tv(const Dist& p, const Dist& q) {
  if (p.size() != q.size()) throw Error(ErrorKind::Shape, "tv: support mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
  return 0.5 * s;
}

}  // namespace promptlab
