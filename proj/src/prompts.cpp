#include "promptlab/prompts.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace promptlab {

namespace {

void check_part(const Tokens& t, int delimiter, int pad, const char* what) {
  if (t.empty()) throw Error(ErrorKind::Config, std::string("empty ") + what);
  for (int v : t)
    if (v == delimiter || v == pad)
      throw Error(ErrorKind::Config, std::string(what) + " contains the delimiter or PAD");
}

std::vector<Tokens> split_on(const Tokens& flat, int delimiter) {
  std::vector<Tokens> segs(1);
  for (int t : flat) {
    if (t == delimiter) segs.emplace_back();
    else segs.back().push_back(t);
  }
  return segs;
}

}  // namespace

// ---------------------------------------------------------------- ICL

std::vector<int> IclPrompt::x_lengths() const {
  std::vector<int> out;
  for (const auto& d : demos) out.push_back(static_cast<int>(d.x.size()));
  return out;
}

IclPrompt build_icl(const std::vector<IclDemo>& demos, int delimiter, const Tokens& query,
                    int width, int pad) {
  IclPrompt p;
  p.demos = demos;
  p.delimiter = delimiter;
  p.query = query;
  check_part(query, delimiter, pad, "query");
  Tokens flat;
  for (const auto& d : demos) {
    check_part(d.x, delimiter, pad, "demo input");
    check_part(d.y, delimiter, pad, "demo response");
    flat.insert(flat.end(), d.x.begin(), d.x.end());
    flat.insert(flat.end(), d.y.begin(), d.y.end());
    flat.push_back(delimiter);
  }
  flat.insert(flat.end(), query.begin(), query.end());
  p.flattened = Sequence::from_tokens(flat, width, pad);
  return p;
}

IclPrompt parse_icl(const Sequence& flattened, int delimiter, const std::vector<int>& x_lengths) {
  const auto segs = split_on(flattened.tokens(), delimiter);
  if (segs.size() != x_lengths.size() + 1)
    throw Error(ErrorKind::Config, "parse_icl: delimiter count does not match the layout");
  std::vector<IclDemo> demos;
  for (std::size_t i = 0; i < x_lengths.size(); ++i) {
    const int xl = x_lengths[i];
    if (xl <= 0 || xl >= static_cast<int>(segs[i].size()))
      throw Error(ErrorKind::Config, "parse_icl: demo " + std::to_string(i) + " does not fit its layout");
    demos.push_back({Tokens(segs[i].begin(), segs[i].begin() + xl),
                     Tokens(segs[i].begin() + xl, segs[i].end())});
  }
  return build_icl(demos, delimiter, segs.back(), flattened.width(), flattened.pad());
}

// ---------------------------------------------------------------- CoT

CotPrompt build_cot(const std::vector<CotDemo>& demos, int delimiter, const Tokens& query,
                    int width, int pad) {
  CotPrompt p;
  p.demos = demos;
  p.delimiter = delimiter;
  p.query = query;
  check_part(query, delimiter, pad, "query");
  Tokens flat;
  std::size_t L = demos.empty() ? 0 : demos.front().steps.size();
  for (const auto& d : demos) {
    if (d.steps.size() != L || L == 0)
      throw Error(ErrorKind::Config, "every CoT demo needs the same positive number of steps");
    check_part(d.x, delimiter, pad, "demo input");
    flat.insert(flat.end(), d.x.begin(), d.x.end());
    for (const auto& s : d.steps) {
      check_part(s, delimiter, pad, "demo step");
      flat.insert(flat.end(), s.begin(), s.end());
    }
    flat.push_back(delimiter);
  }
  flat.insert(flat.end(), query.begin(), query.end());
  p.flattened = Sequence::from_tokens(flat, width, pad);
  return p;
}

CotPrompt parse_cot(const Sequence& flattened, int delimiter, const std::vector<int>& x_lengths,
                    const std::vector<std::vector<int>>& step_lengths) {
  const auto segs = split_on(flattened.tokens(), delimiter);
  if (segs.size() != x_lengths.size() + 1 || step_lengths.size() != x_lengths.size())
    throw Error(ErrorKind::Config, "parse_cot: delimiter count does not match the layout");
  std::vector<CotDemo> demos;
  for (std::size_t i = 0; i < x_lengths.size(); ++i) {
    std::size_t pos = 0;
    auto take = [&](int len) {
      if (len <= 0 || pos + len > segs[i].size())
        throw Error(ErrorKind::Config, "parse_cot: demo " + std::to_string(i) + " does not fit its layout");
      Tokens t(segs[i].begin() + pos, segs[i].begin() + pos + len);
      pos += len;
      return t;
    };
    CotDemo d;
    d.x = take(x_lengths[i]);
    for (int sl : step_lengths[i]) d.steps.push_back(take(sl));
    if (pos != segs[i].size())
      throw Error(ErrorKind::Config, "parse_cot: demo " + std::to_string(i) + " has trailing tokens");
    demos.push_back(std::move(d));
  }
  return build_cot(demos, delimiter, segs.back(), flattened.width(), flattened.pad());
}

// ---------------------------------------------------------------- constants

namespace {

// Calls f(prefix) for every prefix over `alphabet` with length <= max_len.
void for_each_prefix(const std::vector<int>& alphabet, int max_len, std::size_t& budget,
                     const std::function<void(const Tokens&)>& f) {
  Tokens cur;
  std::function<void()> rec = [&]() {
    if (budget == 0) throw Error(ErrorKind::Guard, "enumeration exceeds 1e6 items");
    --budget;
    f(cur);
    if (static_cast<int>(cur.size()) >= max_len) return;
    for (int t : alphabet) {
      cur.push_back(t);
      rec();
      cur.pop_back();
    }
  };
  rec();
}

std::vector<int> history_alphabet(const World& w) {
  std::vector<int> a = w.vocab.content();
  a.push_back(w.vocab.delim);
  std::sort(a.begin(), a.end());
  return a;
}

}  // namespace

double estimate_phi(const World& w, int budget) {
  budget = std::min(budget, w.n - 2);
  if (budget < 1) return 0.0;
  const auto alpha = history_alphabet(w);
  const int dl = w.vocab.delim;
  // Markov rows depend on the last token only, so length-1 parts are exhaustive
  const int cap = w.markov() ? std::min(budget, 3) : budget;
  double phi = 0.0;
  std::size_t guard = kEnumerationGuard;
  for_each_prefix(alpha, cap - 1, guard, [&](const Tokens& h) {
    const int rest = cap - 1 - static_cast<int>(h.size());
    const int s_max = w.markov() ? std::min(rest, 1) : rest;
    std::size_t inner = kEnumerationGuard;
    for_each_prefix(alpha, s_max, inner, [&](const Tokens& s) {
      if (guard-- == 0) throw Error(ErrorKind::Guard, "estimate_phi: enumeration exceeds 1e6 pairs");
      Tokens full = h;
      full.push_back(dl);
      full.insert(full.end(), s.begin(), s.end());
      for (int ti = 0; ti < w.num_tasks(); ++ti) {
        const Dist& a = w.row(ti, full);
        const Dist& b = w.row(ti, s);
        for (int t : w.vocab.emission()) {
          if (a[t] == 0 && b[t] == 0) continue;
          if (a[t] == 0 || b[t] == 0) return void(phi = kInf);
          phi = std::max(phi, std::fabs(std::log(a[t]) - std::log(b[t])));
        }
      }
    });
  });
  return phi;
}

double estimate_varphi(const World& pre, const World& shifted) {
  if (pre.vocab.size() != shifted.vocab.size() || pre.num_tasks() != shifted.num_tasks() ||
      pre.n != shifted.n)
    throw Error(ErrorKind::Shape, "estimate_varphi: worlds differ in structure");
  for (int i = 0; i < pre.num_tasks(); ++i)
    if (pre.tasks[i].id != shifted.tasks[i].id)
      throw Error(ErrorKind::Shape, "estimate_varphi: task ids differ");
  const bool markov = pre.markov() && shifted.markov();
  const int max_len = markov ? std::min(1, pre.n - 2) : pre.n - 2;
  double v = 0.0;
  std::size_t guard = kEnumerationGuard;
  for_each_prefix(history_alphabet(pre), std::max(max_len, 0), guard, [&](const Tokens& h) {
    for (int ti = 0; ti < pre.num_tasks(); ++ti) v = std::max(v, tv(pre.row(ti, h), shifted.row(ti, h)));
  });
  return v;
}

double prior_imbalance(const World& w) {
  double lo = kInf, hi = 0;
  for (double p : w.prior) {
    if (!(p > 0)) throw Error(ErrorKind::Domain, "prior_imbalance: zero prior weight");
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  }
  return hi / lo;
}

EpsilonIcl epsilon_icl_detail(const World& w, const IclPrompt& p) {
  EpsilonIcl e;
  e.query_ambiguity = ambiguity(w, p.query).ambiguity;
  if (e.query_ambiguity >= 1.0)
    throw Error(ErrorKind::Domain, "epsilon_icl: query ambiguity is 1");
  double worst = 0.0;
  for (const auto& d : p.demos) {
    Tokens xy = d.x;
    xy.insert(xy.end(), d.y.begin(), d.y.end());
    const double a = ambiguity(w, xy).ambiguity;
    if (a >= 1.0) throw Error(ErrorKind::Domain, "epsilon_icl: demo ambiguity is 1");
    e.demo_ambiguity.push_back(a);
    worst = std::max(worst, a / (1.0 - a));
  }
  e.epsilon = worst / (1.0 - e.query_ambiguity);
  return e;
}

double epsilon_icl(const World& w, const IclPrompt& p) { return epsilon_icl_detail(w, p).epsilon; }

}  // namespace promptlab
