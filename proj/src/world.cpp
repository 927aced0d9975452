#include "promptlab/world.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace promptlab {

namespace {

bool is_emission(const Vocab& v, int t) {
  return v.roles[t] == Role::Content || t == v.eos;
}

std::string row_desc(const Task& t, const std::string& where) {
  return "task " + std::to_string(t.id) + " " + where;
}

}  // namespace

// ---------------------------------------------------------------- Vocab

int Vocab::id_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (names[i] == name) return i;
  return -1;
}

void Vocab::finalize() {
  if (roles.size() != names.size() || emb.size() != names.size())
    throw Error(ErrorKind::Config, "vocab: names, roles and embeddings differ in length");
  sos = eos = pad = delim = -1;
  auto set_special = [&](int& slot, int i, const char* what) {
    if (slot != -1) throw Error(ErrorKind::Config, std::string("vocab: duplicate ") + what + " token");
    slot = i;
  };
  content_.clear();
  emission_.clear();
  for (int i = 0; i < size(); ++i) {
    switch (roles[i]) {
      case Role::Sos: set_special(sos, i, "SOS"); break;
      case Role::Eos: set_special(eos, i, "EOS"); break;
      case Role::Pad: set_special(pad, i, "PAD"); break;
      case Role::Delim: set_special(delim, i, "delimiter"); break;
      case Role::Content: content_.push_back(i); break;
    }
    if (roles[i] == Role::Content || roles[i] == Role::Eos) emission_.push_back(i);
  }
  if (sos < 0 || eos < 0 || pad < 0 || delim < 0)
    throw Error(ErrorKind::Config, "vocab: SOS, EOS, PAD and delimiter tokens are all required");
  if (content_.empty()) throw Error(ErrorKind::Config, "vocab: no content tokens");
  if (!(alpha > 0)) throw Error(ErrorKind::Config, "vocab: alpha must be > 0");
  if (!(beta > 0)) throw Error(ErrorKind::Config, "vocab: beta must be > 0");
  const int d = dim();
  if (d <= 0) throw Error(ErrorKind::Config, "vocab: embedding dimension must be >= 1");
  for (int i = 0; i < size(); ++i) {
    if (static_cast<int>(emb[i].size()) != d)
      throw Error(ErrorKind::Config, "vocab: token '" + names[i] + "' has wrong embedding dimension");
    double nrm = 0;
    for (double x : emb[i]) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (i == pad && nrm != 0.0)
      throw Error(ErrorKind::Config, "vocab: PAD embedding must be the zero vector");
    if (nrm > alpha * (1 + 1e-12))
      throw Error(ErrorKind::Config, "vocab: token '" + names[i] + "' has norm above alpha");
  }
  for (int i = 0; i < size(); ++i)
    for (int j = i + 1; j < size(); ++j) {
      double s = 0;
      for (int k = 0; k < d; ++k) s += (emb[i][k] - emb[j][k]) * (emb[i][k] - emb[j][k]);
      if (std::sqrt(s) < beta * (1 - 1e-12))
        throw Error(ErrorKind::Config, "vocab: tokens '" + names[i] + "' and '" + names[j] +
                                           "' are closer than beta");
    }
}

// ---------------------------------------------------------------- Sequence

Sequence Sequence::from_tokens(std::span<const int> toks, int width, int pad) {
  if (static_cast<int>(toks.size()) > width)
    throw Error(ErrorKind::Overflow, "sequence of length " + std::to_string(toks.size()) +
                                         " exceeds width " + std::to_string(width));
  Sequence s(width, pad);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (toks[i] == pad) throw Error(ErrorKind::Config, "PAD inside genuine tokens");
    s.cols_[i] = toks[i];
  }
  return s;
}

int Sequence::genuine_length() const {
  int c = 0;
  for (int t : cols_) c += (t != pad_);
  return c;
}

Tokens Sequence::tokens() const {
  Tokens out;
  for (int t : cols_) {
    if (t == pad_) break;
    out.push_back(t);
  }
  return out;
}

bool Sequence::well_formed() const {
  bool seen_pad = false;
  for (int t : cols_) {
    if (t == pad_) seen_pad = true;
    else if (seen_pad) return false;
  }
  return true;
}

int genuine_length(const Sequence& s) { return s.genuine_length(); }

Sequence concat(const std::vector<Sequence>& parts) {
  if (parts.empty()) throw Error(ErrorKind::Shape, "concat: no parts");
  const int width = parts.front().width();
  const int pad = parts.front().pad();
  Tokens all;
  for (const auto& p : parts) {
    if (p.width() != width || p.pad() != pad)
      throw Error(ErrorKind::Shape, "concat: parts differ in width");
    for (int t : p.columns())
      if (t != pad) all.push_back(t);
  }
  return Sequence::from_tokens(all, width, pad);
}

// ---------------------------------------------------------------- World

int World::task_index(int id) const {
  for (int i = 0; i < num_tasks(); ++i)
    if (tasks[i].id == id) return i;
  throw Error(ErrorKind::Config, "unknown task id " + std::to_string(id));
}

bool World::markov() const {
  return std::all_of(tasks.begin(), tasks.end(),
                     [](const Task& t) { return t.backend == Backend::Markov; });
}

std::uint64_t World::prefix_key(std::span<const int> prefix) const {
  // digits 1..V in base V+1, so every prefix (including empty) has a unique key
  std::uint64_t k = 0;
  const std::uint64_t base = static_cast<std::uint64_t>(vocab.size()) + 1;
  for (int t : prefix) k = k * base + static_cast<std::uint64_t>(t + 1);
  return k;
}

void World::finalize() {
  vocab.finalize();
  const int V = vocab.size();
  if (n < 1) throw Error(ErrorKind::Config, "n must be >= 1");
  if (!(b > 0 && b < 1)) throw Error(ErrorKind::Config, "b must lie in (0,1)");
  if (floor_mode != "mix" && floor_mode != "validate")
    throw Error(ErrorKind::Config, "floor_mode must be 'mix' or 'validate'");
  if (tasks.empty()) throw Error(ErrorKind::Config, "no content tasks");
  if (prior.size() != tasks.size())
    throw Error(ErrorKind::Config, "prior length differs from number of content tasks");
  double ps = 0;
  for (double p : prior) {
    if (!(p > 0)) throw Error(ErrorKind::Config, "every prior weight must be > 0");
    ps += p;
  }
  if (std::fabs(ps - 1.0) > 1e-12) throw Error(ErrorKind::Config, "prior does not sum to 1");
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i].id == tasks[j].id)
        throw Error(ErrorKind::Config, "duplicate task id " + std::to_string(tasks[i].id));

  const double E = static_cast<double>(vocab.emission().size());
  if (floor_mode == "mix" && b * E > 1.0)
    throw Error(ErrorKind::Config, "b * |E| exceeds 1; the floor cannot be mixed in");

  auto fix_row = [&](Dist& r, const std::string& where) {
    if (static_cast<int>(r.size()) != V) throw Error(ErrorKind::Config, where + ": row has wrong length");
    double s = 0;
    for (int t = 0; t < V; ++t) {
      if (!(r[t] >= 0) || !std::isfinite(r[t]))
        throw Error(ErrorKind::Config, where + ": negative or non-finite probability");
      if (!is_emission(vocab, t) && r[t] != 0.0)
        throw Error(ErrorKind::Config, where + ": token '" + vocab.names[t] +
                                           "' cannot be emitted by a content task");
      s += r[t];
    }
    if (std::fabs(s - 1.0) > 1e-12) throw Error(ErrorKind::Config, where + ": row does not sum to 1");
    if (floor_mode == "mix" && !floor_applied) {
      const double lam = 1.0 - b * E;
      for (int t : vocab.emission()) r[t] = lam * r[t] + b;
    } else {
      for (int t : vocab.emission())
        if (r[t] < b)
          throw Error(ErrorKind::Config, where + ": probability of '" + vocab.names[t] +
                                             "' is below the floor b");
    }
  };

  for (auto& t : tasks) {
    if (t.kind != TaskKind::Content) throw Error(ErrorKind::Config, "World::tasks holds content tasks only");
    if (t.backend == Backend::Markov) {
      fix_row(t.init, row_desc(t, "init"));
      t.rows.resize(V);
      for (int c : vocab.content()) {
        if (t.rows[c].empty())
          throw Error(ErrorKind::Config, row_desc(t, "matrix") + ": missing row for '" + vocab.names[c] + "'");
        fix_row(t.rows[c], row_desc(t, "matrix row '" + vocab.names[c] + "'"));
      }
      for (int s = 0; s < V; ++s)
        if (!vocab.is_content(s) && !t.rows[s].empty())
          throw Error(ErrorKind::Config, row_desc(t, "matrix") + ": row for non-content token '" +
                                             vocab.names[s] + "'");
    } else {
      // key space must fit in 64 bits
      double bits = n * std::log2(static_cast<double>(V) + 1.0);
      if (bits > 63) throw Error(ErrorKind::Config, "table backend: (|V|+1)^n exceeds 2^63");
      if (!t.table.count(0))
        throw Error(ErrorKind::Config, row_desc(t, "table") + ": the empty prefix is required");
      for (auto& [k, r] : t.table) fix_row(r, row_desc(t, "table entry " + std::to_string(k)));
    }
  }

  if (floor_mode == "mix") floor_applied = true;
  eos_row_.assign(V, 0.0);
  eos_row_[vocab.eos] = 1.0;
  zero_row_.assign(V, 0.0);
  delim_row_.assign(V, 0.0);
  delim_row_[vocab.delim] = 1.0;
}

const Dist& World::table_row(const Task& t, std::span<const int> prefix) const {
  const std::uint64_t base = static_cast<std::uint64_t>(vocab.size()) + 1;
  // keys of suffixes of increasing length; look up longest first
  std::uint64_t keys[64];
  const int L = static_cast<int>(prefix.size());
  std::uint64_t k = 0, mult = 1;
  keys[0] = 0;
  for (int len = 1; len <= L; ++len) {
    k += static_cast<std::uint64_t>(prefix[L - len] + 1) * mult;
    mult *= base;
    keys[len] = k;
  }
  for (int len = L; len >= 0; --len) {
    auto it = t.table.find(keys[len]);
    if (it != t.table.end()) return it->second;
  }
  return t.table.at(0);
}

const Dist& World::row(int task, std::span<const int> prefix) const {
  if (task == kDelimiterTask) return delim_row_;
  for (int t : prefix)
    if (t == vocab.eos) return zero_row_;
  if (at_cap(prefix)) return eos_row_;
  const Task& tk = tasks[task];
  if (tk.backend == Backend::Table) return table_row(tk, prefix);
  if (prefix.empty()) return tk.init;
  const int last = prefix.back();
  if (last == vocab.delim || last == vocab.sos) return tk.init;
  return tk.rows[last];
}

// ---------------------------------------------------------------- likelihoods

double seq_logprob(const World& w, int task, std::span<const int> prefix,
                   std::span<const int> seq, bool prompt_mode) {
  Tokens h(prefix.begin(), prefix.end());
  h.reserve(prefix.size() + seq.size());
  double lp = 0.0;
  for (int t : seq) {
    if (!(prompt_mode && t == w.vocab.delim)) {
      const double p = w.prob(task, h, t);
      if (p <= 0) return kNegInf;
      lp += std::log(p);
    }
    h.push_back(t);
  }
  return lp;
}

double doc_likelihood(const World& w, const Sequence& d, int task) {
  const Tokens toks = d.tokens();
  return std::exp(seq_logprob(w, task, {}, toks));
}

double doc_likelihood(const World& w, const Sequence& d, const CompositeTask& ct) {
  if (ct.steps.empty()) throw Error(ErrorKind::Config, "composite task with no steps");
  const Tokens toks = d.tokens();
  Tokens h;
  double lp = 0.0;
  std::size_t seg = 0;
  int used = 0;
  for (int t : toks) {
    while (seg + 1 < ct.steps.size()) {
      const int len = ct.seg_len.empty() ? 1 : ct.seg_len[seg];
      if (used < len) break;
      ++seg;
      used = 0;
    }
    const double p = w.prob(ct.steps[seg], h, t);
    if (p <= 0) return 0.0;
    lp += std::log(p);
    h.push_back(t);
    ++used;
  }
  return std::exp(lp);
}

double marginal_likelihood(const World& w, const Sequence& d) {
  const Tokens toks = d.tokens();
  std::vector<double> lw(w.num_tasks());
  for (int i = 0; i < w.num_tasks(); ++i)
    lw[i] = std::log(w.prior[i]) + seq_logprob(w, i, {}, toks);
  return std::exp(logsumexp(lw));
}

double cond_prob(const World& w, std::span<const int> y, std::span<const int> x,
                 std::optional<int> task) {
  if (static_cast<int>(x.size() + y.size()) > w.n)
    throw Error(ErrorKind::Overflow, "cond_prob: l(x)+l(y) exceeds n");
  if (task) return std::exp(seq_logprob(w, *task, x, y));
  std::vector<double> joint(w.num_tasks()), evid(w.num_tasks());
  for (int i = 0; i < w.num_tasks(); ++i) {
    const double lx = std::log(w.prior[i]) + seq_logprob(w, i, {}, x, true);
    evid[i] = lx;
    joint[i] = lx + seq_logprob(w, i, x, y);
  }
  const double le = logsumexp(evid);
  if (le == kNegInf) throw Error(ErrorKind::ZeroEvidence, "cond_prob: x has zero probability");
  return std::exp(logsumexp(joint) - le);
}

double cond_prob(const World& w, const Sequence& y, const Sequence& x, std::optional<int> task) {
  const Tokens yt = y.tokens(), xt = x.tokens();
  return cond_prob(w, yt, xt, task);
}

Dist next_token_marginal(const World& w, std::span<const int> prefix) {
  const int T = w.num_tasks();
  std::vector<double> lw(T);
  for (int i = 0; i < T; ++i) lw[i] = std::log(w.prior[i]) + seq_logprob(w, i, {}, prefix, true);
  const double lz = logsumexp(lw);
  if (lz == kNegInf) throw Error(ErrorKind::ZeroEvidence, "next_token_marginal: prefix has zero probability");
  Dist out(w.vocab.size(), 0.0);
  for (int i = 0; i < T; ++i) {
    const double wi = std::exp(lw[i] - lz);
    if (wi == 0) continue;
    const Dist& r = w.row(i, prefix);
    for (int t = 0; t < w.vocab.size(); ++t) out[t] += wi * r[t];
  }
  return out;
}

// ---------------------------------------------------------------- sampling

namespace {

int draw(const Dist& r, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (int t = 0; t < static_cast<int>(r.size()); ++t) {
    if (r[t] <= 0) continue;
    acc += r[t];
    last = t;
    if (u < acc) return t;
  }
  return last;  // rounding slack lands on the last positive entry
}

Sequence sample_with(const World& w, const std::function<int(int pos)>& task_at, Rng& rng) {
  Tokens toks;
  for (int pos = 0; pos < w.n; ++pos) {
    const int t = draw(w.row(task_at(pos), toks), rng);
    if (t < 0) throw Error(ErrorKind::Domain, "sample_document: empty row");
    toks.push_back(t);
    if (t == w.vocab.eos) return Sequence::from_tokens(toks, w.n, w.vocab.pad);
  }
  throw Error(ErrorKind::Domain, "sample_document: EOS not reached within n positions");
}

}  // namespace

Sequence sample_document(const World& w, int task, Rng& rng) {
  return sample_with(w, [task](int) { return task; }, rng);
}

Sequence sample_document(const World& w, const CompositeTask& ct, Rng& rng) {
  if (ct.steps.empty()) throw Error(ErrorKind::Config, "composite task with no steps");
  std::vector<int> bounds;  // first position of each segment after the first
  int pos = 0;
  for (std::size_t j = 0; j + 1 < ct.steps.size(); ++j) {
    pos += ct.seg_len.empty() ? 1 : ct.seg_len[j];
    bounds.push_back(pos);
  }
  return sample_with(
      w,
      [&](int p) {
        std::size_t seg = 0;
        while (seg < bounds.size() && p >= bounds[seg]) ++seg;
        return ct.steps[seg];
      },
      rng);
}

// ---------------------------------------------------------------- enumeration

namespace {

bool any_task_positive(const World& w, std::span<const int> prefix, int t) {
  for (int i = 0; i < w.num_tasks(); ++i)
    if (w.prob(i, prefix, t) > 0) return true;
  return false;
}

}  // namespace

std::vector<Tokens> enumerate_prefixes(const World& w) {
  std::vector<Tokens> out;
  Tokens cur;
  std::function<void()> rec = [&]() {
    if (out.size() >= kEnumerationGuard)
      throw Error(ErrorKind::Guard, "enumerate_histories: more than 1e6 histories");
    out.push_back(cur);
    if (static_cast<int>(cur.size()) >= w.n - 1) return;
    for (int t : w.vocab.content()) {
      if (!any_task_positive(w, cur, t)) continue;
      cur.push_back(t);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

std::vector<Sequence> enumerate_histories(const World& w) {
  std::vector<Sequence> out;
  for (const auto& p : enumerate_prefixes(w)) {
    Tokens h{w.vocab.sos};
    h.insert(h.end(), p.begin(), p.end());
    out.push_back(Sequence::from_tokens(h, w.n, w.vocab.pad));
  }
  return out;
}

std::vector<Tokens> enumerate_documents(const World& w) {
  std::vector<Tokens> out;
  Tokens cur;
  std::function<void()> rec = [&]() {
    if (out.size() >= kEnumerationGuard)
      throw Error(ErrorKind::Guard, "enumerate_documents: more than 1e6 documents");
    for (int t : w.vocab.emission()) {
      if (!any_task_positive(w, cur, t)) continue;
      cur.push_back(t);
      if (t == w.vocab.eos) out.push_back(cur);
      else rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

World restrict_tasks(const World& w, const std::vector<int>& idx) {
  if (idx.empty()) throw Error(ErrorKind::Config, "restrict_tasks: empty task subset");
  World r = w;
  r.tasks.clear();
  r.prior.clear();
  double s = 0;
  for (int i : idx) s += w.prior.at(i);
  for (int i : idx) {
    r.tasks.push_back(w.tasks.at(i));
    r.prior.push_back(w.prior[i] / s);
  }
  return r;
}

}  // namespace promptlab
