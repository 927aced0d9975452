#include "promptlab/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

namespace promptlab {

Mat softmax_cols(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double mx = m.col(c).maxCoeff();
    if (mx == kNegInf || m.rows() == 0) throw Error(ErrorKind::Domain, "softmax_cols: column is all -inf");
    double s = 0.0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const double e = m(r, c) == kNegInf ? 0.0 : std::exp(m(r, c) - mx);
      out(r, c) = e;
      s += e;
    }
    out.col(c) /= s;
  }
  return out;
}

BoltzParts boltz_parts(const Vec& a) {
  if (a.size() == 0) throw Error(ErrorKind::Domain, "boltz: empty input");
  const double mx = a.maxCoeff();
  if (mx == kNegInf) throw Error(ErrorKind::Domain, "boltz: no finite entry");
  double z = 0.0, num = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] == kNegInf) continue;
    const double e = std::exp(a[i] - mx);
    z += e;
    num += (a[i] - mx) * e;
  }
  return {mx, num / z};
}

double boltz(const Vec& a) {
  const BoltzParts p = boltz_parts(a);
  return p.top + p.offset;
}

Mat positional_encoder(double alpha, int d, int n) {
  if (!(alpha > 0)) throw Error(ErrorKind::Domain, "positional_encoder: alpha must be > 0");
  Mat P(d, n);
  for (int j = 0; j < n; ++j) P.col(j).setConstant(2.0 * (j + 1) * alpha);
  return P;
}

// ---------------------------------------------------------------- separateness

namespace {

constexpr double kMargin = 1e-9;

std::string col_key(const Vec& v) {
  std::string s(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size());
  return s;
}

// distinct column vectors across all sequences
std::vector<Vec> distinct_columns(const std::vector<Mat>& seqs) {
  std::map<std::string, Vec> m;
  for (const auto& X : seqs)
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
      Vec c = X.col(k);
      m.emplace(col_key(c), c);
    }
  std::vector<Vec> out;
  for (auto& [k, v] : m) out.push_back(v);
  return out;
}

}  // namespace

SeparatenessCert check_separateness(const std::vector<Mat>& seqs) {
  SeparatenessCert c;
  if (seqs.empty()) {
    c.reason = "no sequences";
    return c;
  }
  const auto rows = seqs.front().rows(), cols = seqs.front().cols();
  for (const auto& X : seqs)
    if (X.rows() != rows || X.cols() != cols) {
      c.reason = "sequences differ in shape";
      return c;
    }
  // no duplicate column inside a sequence
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (Eigen::Index k = 0; k < cols; ++k)
      for (Eigen::Index l = k + 1; l < cols; ++l)
        if (seqs[i].col(k) == seqs[i].col(l)) {
          c.reason = "duplicate column inside a sequence";
          c.seq_a = c.seq_b = static_cast<int>(i);
          c.col_a = static_cast<int>(k);
          c.col_b = static_cast<int>(l);
          return c;
        }
  double nmin = kInf, nmax = 0.0, dmin = kInf;
  std::vector<std::pair<int, int>> where;
  std::vector<Vec> vecs;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (Eigen::Index k = 0; k < cols; ++k) {
      Vec v = seqs[i].col(k);
      const double nr = v.norm();
      nmin = std::min(nmin, nr);
      nmax = std::max(nmax, nr);
      if (seen.insert(col_key(v)).second) {
        vecs.push_back(v);
        where.emplace_back(static_cast<int>(i), static_cast<int>(k));
      }
    }
  int wa = -1, wb = -1;
  for (std::size_t a = 0; a < vecs.size(); ++a)
    for (std::size_t b = a + 1; b < vecs.size(); ++b) {
      const double dd = (vecs[a] - vecs[b]).norm();
      if (dd < dmin) {
        dmin = dd;
        wa = static_cast<int>(a);
        wb = static_cast<int>(b);
      }
    }
  c.r_min = nmin - kMargin * std::max(1.0, nmin);
  c.r_max = nmax + kMargin * std::max(1.0, nmax);
  c.eta = std::isinf(dmin) ? kInf : dmin - kMargin * std::max(1.0, dmin);
  if (!(c.r_min > 0)) {
    c.reason = "a column has zero norm";
    return c;
  }
  if (!(c.eta > 0)) {
    c.reason = "distinct columns are too close";
    c.seq_a = where[wa].first;
    c.col_a = where[wa].second;
    c.seq_b = where[wb].first;
    c.col_b = where[wb].second;
    return c;
  }
  c.valid = true;
  return c;
}

// ---------------------------------------------------------------- separating vector

double lemma_score_scale(int vocab_size, int d, double kappa, double eta, double r_min) {
  return std::pow(vocab_size + 1.0, 4) * (M_PI * d / 8.0) * kappa / (eta * r_min);
}

namespace {

double band_lower(int vocab_size, int d) {
  return std::sqrt(8.0 / (M_PI * d)) / ((vocab_size + 1.0) * (vocab_size + 1.0));
}

// min over a != b, c of |v.v_c| |v.(v_a - v_b)|
double min_score_factor(const std::vector<Vec>& cols, const Vec& v) {
  std::vector<double> p(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) p[i] = v.dot(cols[i]);
  double pc = kInf;
  for (double x : p) pc = std::min(pc, std::fabs(x));
  std::vector<double> s = p;
  std::sort(s.begin(), s.end());
  double gap = kInf;
  for (std::size_t i = 1; i < s.size(); ++i) gap = std::min(gap, s[i] - s[i - 1]);
  return pc * gap;  // +inf for a single column
}

}  // namespace

bool check_separating_vector(const std::vector<Vec>& cols, const Vec& v, double uu, double kappa) {
  const int d = static_cast<int>(v.size());
  const double lo = band_lower(static_cast<int>(cols.size()), d);
  for (const auto& c : cols) {
    const double pr = std::fabs(v.dot(c)), nr = c.norm();
    if (pr < lo * nr || pr > nr * (1 + 1e-12)) return false;
  }
  // exhaustive triple check |uu'| |v.v_c| |v.v_a - v.v_b| > kappa
  for (const auto& c : cols) {
    const double pc = std::fabs(v.dot(c));
    for (std::size_t a = 0; a < cols.size(); ++a)
      for (std::size_t b = a + 1; b < cols.size(); ++b)
        if (!(std::fabs(uu) * pc * std::fabs(v.dot(cols[a]) - v.dot(cols[b])) > kappa)) return false;
  }
  return true;
}

SeparatingVector find_separating_vector(const std::vector<Vec>& cols, double kappa,
                                        std::uint64_t seed, double eta, double r_min, long budget) {
  if (cols.empty()) throw Error(ErrorKind::Domain, "find_separating_vector: empty token set");
  const int d = static_cast<int>(cols.front().size());
  const double uu = lemma_score_scale(static_cast<int>(cols.size()), d, kappa, eta, r_min);
  Rng rng(seed);
  for (long draw = 1; draw <= budget; ++draw) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    const double nr = v.norm();
    if (nr == 0) continue;
    v /= nr;
    if (check_separating_vector(cols, v, uu, kappa)) {
      SeparatingVector s;
      s.v = v;
      s.u = std::sqrt(uu);
      s.u_prime = std::sqrt(uu);
      s.draws = draw;
      return s;
    }
  }
  throw Error(ErrorKind::Certification, "find_separating_vector: search budget exhausted");
}

// ---------------------------------------------------------------- attention

Mat causal_mask(int n) {
  Mat M = Mat::Zero(n, n);
  for (int l = 0; l < n; ++l)
    for (int k = 0; k < l; ++k) M(l, k) = kNegInf;
  return M;
}

Mat attention_forward(const AttentionParams& p, const Mat& X) {
  const auto d = X.rows(), n = X.cols();
  if (p.W_K.cols() != d || p.W_Q.cols() != d || p.W_V.cols() != d || p.W_O.rows() != d ||
      p.W_O.cols() != p.W_V.rows() || p.mask.rows() < n || p.mask.cols() < n)
    throw Error(ErrorKind::Shape, "attention_forward: shape mismatch");
  const Mat S = (p.W_K * X).transpose() * (p.W_Q * X) + p.mask.topLeftCorner(n, n);
  return X + p.W_O * (p.W_V * X) * softmax_cols(S);
}

const char* scale_name(ScoreScale s) {
  switch (s) {
    case ScoreScale::Lemma: return "lemma";
    case ScoreScale::Tight: return "tight";
    case ScoreScale::Soft: return "soft";
  }
  return "?";
}

double default_kappa(int n) { return 2.0 * std::log(static_cast<double>(n)) + 3.0; }

ContextualAttention build_contextual_attention(const std::vector<Mat>& seqs, double kappa,
                                               std::uint64_t seed, ScoreScale scale) {
  ContextualAttention ca;
  ca.separateness = check_separateness(seqs);
  if (!ca.separateness.valid)
    throw Error(ErrorKind::Certification, "contextual attention: inputs not separated (" +
                                              ca.separateness.reason + ")");
  const auto& cert = ca.separateness;
  const int d = static_cast<int>(seqs.front().rows());
  const int n = static_cast<int>(seqs.front().cols());
  const auto vocab = distinct_columns(seqs);
  const int V = static_cast<int>(vocab.size());
  const SeparatingVector sv = find_separating_vector(vocab, kappa, seed, cert.eta, cert.r_min);
  double uu = sv.u * sv.u_prime;
  if (scale == ScoreScale::Tight) {
    const double f = min_score_factor(vocab, sv.v);
    if (std::isfinite(f)) uu = std::min(uu, kappa * (1 + 1e-6) / f);
    if (!check_separating_vector(vocab, sv.v, uu, kappa))
      throw Error(ErrorKind::Certification, "contextual attention: tight scale fails the score gap");
  } else if (scale == ScoreScale::Soft) {
    // largest |score| = 1: the softmax keeps every key's weight representable
    double pmax = 0;
    for (const auto& c : vocab) pmax = std::max(pmax, std::fabs(sv.v.dot(c)));
    uu = 1.0 / (pmax * pmax);
  }
  ca.scale = scale;
  ca.kappa = kappa;
  ca.score_scale = uu;
  const double su = std::sqrt(uu);
  AttentionParams& p = ca.params;
  p.W_K = su * sv.v.transpose();
  p.W_Q = su * sv.v.transpose();
  p.W_V = sv.v.transpose();                          // u'' = 1
  p.W_O = (cert.eta / (4.0 * cert.r_max)) * sv.v;    // |W_O u''| = eta / (4 r_max)
  p.mask = causal_mask(n);

  ca.r = cert.r_max + cert.eta / 4.0;
  const double ln = std::log(static_cast<double>(n));
  const double V4 = std::pow(V + 1.0, 4);
  ca.log_gamma = std::log(2.0 * ln * ln * cert.eta * cert.eta * cert.r_min) -
                 std::log(cert.r_max * cert.r_max * V4 * (2 * ln + 3) * M_PI * d) -
                 V4 * (2 * ln + 3) * M_PI * d * cert.r_max * cert.r_max / (4 * cert.eta * cert.r_min);

  // pairwise certificate over distinct (sequence prefix, column) contexts
  std::map<std::string, Vec> ctx;
  for (const auto& X : seqs) {
    const Mat Z = attention_forward(p, X);
    for (int k = 0; k < n; ++k) {
      const Mat pre = X.leftCols(k + 1);
      std::string key(reinterpret_cast<const char*>(pre.data()), sizeof(double) * pre.size());
      Vec z = Z.col(k);
      ca.max_norm = std::max(ca.max_norm, z.norm());
      auto [it, fresh] = ctx.emplace(key, z);
      if (!fresh && it->second != z)
        throw Error(ErrorKind::Certification, "contextual attention: identical contexts differ");
    }
  }
  std::vector<Vec> outs;
  for (auto& [k, z] : ctx) outs.push_back(z);
  const double gamma = std::exp(ca.log_gamma);
  ca.min_gap = kInf;
  for (std::size_t a = 0; a < outs.size(); ++a)
    for (std::size_t b = a + 1; b < outs.size(); ++b) {
      const double g = (outs[a] - outs[b]).norm();
      ca.min_gap = std::min(ca.min_gap, g);
      if (!(g > gamma)) ++ca.witnesses;
    }
  if (!(ca.max_norm < ca.r)) ++ca.witnesses;
  if (ca.witnesses > 0)
    throw Error(ErrorKind::Certification, "contextual attention: " + std::to_string(ca.witnesses) +
                                              " context pairs violate the (r, gamma) certificate");
  return ca;
}

// ---------------------------------------------------------------- FFN

Vec ffn_forward(const FfnParams& f, const Vec& x) {
  if (f.W1.cols() != x.size()) throw Error(ErrorKind::Shape, "ffn_forward: input width mismatch");
  Vec h = (f.W1 * x + f.b1).cwiseMax(0.0);
  Vec y = f.W2 * h + f.b2;
  if (f.residual) {
    if (y.size() != x.size()) throw Error(ErrorKind::Shape, "ffn_forward: residual needs d' = d");
    y += x;
  }
  return y;
}

FfnParams residual_eliminate(const FfnParams& f) {
  if (!f.residual) throw Error(ErrorKind::Domain, "residual_eliminate: FFN is not residual");
  const auto r = f.W1.rows(), d = f.W1.cols();
  if (f.W2.rows() != d) throw Error(ErrorKind::Shape, "residual_eliminate: residual needs d' = d");
  FfnParams g;
  const Mat I = Mat::Identity(d, d);
  g.W1.resize(r + 2 * d, d);
  g.W1 << f.W1, I, -I;
  g.b1 = Vec::Zero(r + 2 * d);
  g.b1.head(r) = f.b1;
  g.W2.resize(d, r + 2 * d);
  g.W2 << f.W2, I, -I;
  g.b2 = f.b2;
  g.residual = false;
  return g;
}

// ---------------------------------------------------------------- memorizer

Mat encode(const MemorizerModel& m, const Tokens& h) {
  if (static_cast<int>(h.size()) > m.n) throw Error(ErrorKind::Shape, "encode: history longer than n");
  Mat X = m.P;
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (h[j] < 0 || h[j] >= m.token_emb.cols()) throw Error(ErrorKind::Shape, "encode: unknown token");
    X.col(j) += m.token_emb.col(h[j]);
  }
  // PAD embedding is zero, so tail columns are P alone
  return X;
}

namespace {

constexpr double kPointMassLogit = -1000.0;

Vec context_vector(const MemorizerModel& m, const Tokens& h) {
  const Mat Z = attention_forward(m.attention, encode(m, h));
  return Z.col(static_cast<Eigen::Index>(h.size()) - 1);
}

Dist read_out(const MemorizerModel& m, const Vec& z) {
  const Vec logits = m.out_map * ffn_forward(m.ffn, z);
  const double mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp();
  e /= e.sum();
  Dist out(m.vocab_size, 0.0);
  for (std::size_t i = 0; i < m.emission.size(); ++i) out[m.emission[i]] = e[static_cast<Eigen::Index>(i)];
  return out;
}

}  // namespace

std::vector<MemorizerPair> memorization_pairs(const World& w) {
  std::vector<MemorizerPair> out;
  for (const auto& p : enumerate_prefixes(w)) {
    MemorizerPair mp;
    mp.history = {w.vocab.sos};
    mp.history.insert(mp.history.end(), p.begin(), p.end());
    mp.target = next_token_marginal(w, p);
    out.push_back(std::move(mp));
  }
  return out;
}

MemorizerModel build_memorizer(const World& w, const std::vector<MemorizerPair>& pairs,
                               const MemorizerOptions& opt) {
  if (pairs.empty()) throw Error(ErrorKind::Domain, "build_memorizer: no pairs");
  const int V = w.vocab.size();
  MemorizerModel m;
  m.d = w.vocab.dim();
  m.n = w.n;
  m.alpha = w.vocab.alpha;
  m.vocab_size = V;
  m.emission = w.vocab.emission();
  m.token_emb = Mat(m.d, V);
  for (int t = 0; t < V; ++t)
    for (int i = 0; i < m.d; ++i) m.token_emb(i, t) = w.vocab.emb[t][i];
  m.P = positional_encoder(m.alpha, m.d, m.n);
  m.kappa = opt.kappa > 0 ? opt.kappa : default_kappa(m.n);

  // targets -> logits over the emission set
  const int E = static_cast<int>(m.emission.size());
  std::vector<Vec> logits;
  std::set<Tokens> seen;
  for (const auto& pr : pairs) {
    if (pr.history.empty() || pr.history.front() != w.vocab.sos)
      throw Error(ErrorKind::Domain, "build_memorizer: history must start with SOS");
    if (!seen.insert(pr.history).second) throw Error(ErrorKind::Domain, "build_memorizer: duplicate history");
    if (static_cast<int>(pr.target.size()) != V) throw Error(ErrorKind::Shape, "build_memorizer: target length");
    Vec lg(E);
    int zeros = 0;
    for (int i = 0; i < E; ++i) {
      const double p = pr.target[m.emission[i]];
      if (p > 0) lg[i] = std::log(p);
      else {
        ++zeros;
        lg[i] = kPointMassLogit;
      }
    }
    if (zeros > 0 && !(opt.allow_point_mass && zeros == E - 1))
      throw Error(ErrorKind::Domain, "build_memorizer: target has a zero entry (floor b violated)");
    if (zeros > 0)
      for (int i = 0; i < E; ++i)
        if (lg[i] != kPointMassLogit) lg[i] = 0.0;
    logits.push_back(lg);
  }

  std::vector<Mat> X;
  for (const auto& pr : pairs) X.push_back(encode(m, pr.history));

  // Lemma scale first; fall back to the tight scale when the softmax saturates
  // and the scalar context ids collapse.
  std::vector<double> ids;
  Vec g;
  for (ScoreScale sc : {ScoreScale::Lemma, ScoreScale::Tight, ScoreScale::Soft}) {
    ContextualAttention ca;
    try {
      ca = build_contextual_attention(X, m.kappa, opt.seed, sc);
    } catch (const Error& e) {
      if (sc == ScoreScale::Soft) throw;
      continue;
    }
    m.attention = ca.params;
    m.log_gamma = ca.log_gamma;
    m.scale = scale_name(sc);
    std::vector<Vec> Z;
    double zmax = 0;
    for (const auto& pr : pairs) {
      Z.push_back(context_vector(m, pr.history));
      zmax = std::max(zmax, Z.back().norm());
    }
    // scalar context id: projection with the largest minimum gap
    Rng rng(splitmix64(opt.seed) ^ 0xc0ffeeULL);
    double best_gap = -1;
    for (int draw = 0; draw <= opt.projection_draws; ++draw) {
      Vec cand(m.d);
      if (draw == 0) cand = ca.params.W_V.row(0).transpose();
      else
        for (int i = 0; i < m.d; ++i) cand[i] = rng.normal();
      cand.normalize();
      std::vector<double> s;
      for (const auto& z : Z) s.push_back(cand.dot(z));
      std::sort(s.begin(), s.end());
      double gap = kInf;
      for (std::size_t i = 1; i < s.size(); ++i) gap = std::min(gap, s[i] - s[i - 1]);
      if (gap > best_gap) {
        best_gap = gap;
        g = cand;
      }
    }
    if (best_gap > 1e-7 * std::max(1.0, zmax)) {
      ids.clear();
      for (const auto& z : Z) ids.push_back(g.dot(z));
      m.context_gap = best_gap;
      break;
    }
    if (sc == ScoreScale::Soft)
      throw Error(ErrorKind::Certification, "build_memorizer: context ids collide");
  }

  // triangular bumps of half-width w centred at each context id
  const int M = static_cast<int>(pairs.size());
  const double wdt = std::isinf(m.context_gap) ? 1.0 : m.context_gap;
  FfnParams& f = m.ffn;
  f.W1 = Mat::Zero(3 * M, m.d);
  f.b1 = Vec::Zero(3 * M);
  f.W2 = Mat::Zero(E, 3 * M);
  f.b2 = Vec::Zero(E);
  f.residual = false;
  for (int i = 0; i < M; ++i) {
    const double c = ids[i];
    const double knots[3] = {c - wdt, c, c + wdt};
    const double coef[3] = {1.0, -2.0, 1.0};
    for (int k = 0; k < 3; ++k) {
      f.W1.row(3 * i + k) = g.transpose() / wdt;
      f.b1[3 * i + k] = -knots[k] / wdt;
      f.W2.col(3 * i + k) = coef[k] * logits[i];
    }
  }
  if (M == 1) {
    // a single history: constant output, no bump needed
    f.W1.setZero();
    f.b1.setZero();
    f.b1[0] = 1.0;
    f.W2.setZero();
    f.W2.col(0) = logits[0];
  }
  m.out_map = Mat::Identity(E, E);

  m.train_error = 0.0;
  for (const auto& pr : pairs) {
    const Dist out = model_forward(m, pr.history);
    for (int t = 0; t < V; ++t) m.train_error = std::max(m.train_error, std::fabs(out[t] - pr.target[t]));
  }
  return m;
}

Dist model_forward(const MemorizerModel& m, const Tokens& history) {
  if (history.empty()) throw Error(ErrorKind::Shape, "model_forward: empty history");
  return read_out(m, context_vector(m, history));
}

Dist model_forward(const MemorizerModel& m, const Sequence& history) {
  return model_forward(m, history.tokens());
}

}  // namespace promptlab
