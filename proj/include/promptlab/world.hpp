#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "promptlab/common.hpp"

namespace promptlab {

enum class Role { Content, Sos, Eos, Pad, Delim };

struct Vocab {
  std::vector<std::string> names;
  std::vector<Role> roles;
  std::vector<std::vector<double>> emb;  // one d-vector per token; PAD is zero
  int sos = -1, eos = -1, pad = -1, delim = -1;
  double alpha = 1.0;
  double beta = 0.0;

  int size() const { return static_cast<int>(names.size()); }
  int dim() const { return emb.empty() ? 0 : static_cast<int>(emb[0].size()); }
  bool is_content(int t) const { return roles.at(t) == Role::Content; }
  // content tokens + EOS, ascending id
  const std::vector<int>& emission() const { return emission_; }
  const std::vector<int>& content() const { return content_; }
  int id_of(const std::string& name) const;  // -1 when absent

  // Validates roles and the (alpha, beta) invariants; fills the cached sets.
  void finalize();

 private:
  std::vector<int> emission_, content_;
};

// Fixed-width token row, PAD-filled at the tail.
class Sequence {
 public:
  Sequence() = default;
  Sequence(int width, int pad) : cols_(width, pad), pad_(pad) {}
  // throws Overflow when toks do not fit
  static Sequence from_tokens(std::span<const int> toks, int width, int pad);

  int width() const { return static_cast<int>(cols_.size()); }
  int pad() const { return pad_; }
  const std::vector<int>& columns() const { return cols_; }
  int genuine_length() const;
  Tokens tokens() const;  // genuine prefix
  bool well_formed() const;
  bool operator==(const Sequence&) const = default;

 private:
  std::vector<int> cols_;
  int pad_ = -1;
};

int genuine_length(const Sequence& s);

// Merges the non-PAD segments of every part; width is taken from the parts.
Sequence concat(const std::vector<Sequence>& parts);

enum class TaskKind { Content, Delimiter };
enum class Backend { Markov, Table };

struct Task {
  int id = 0;
  TaskKind kind = TaskKind::Content;
  Backend backend = Backend::Markov;
  Dist init;                       // Markov: row after SOS (and after a delimiter)
  std::vector<Dist> rows;          // Markov: indexed by previous token; empty if unused
  std::unordered_map<std::uint64_t, Dist> table;  // Table: prefix key -> row
};

// Element of Theta^L. Task references are indices into World::tasks.
// Segment j spans seg_len[j] tokens; the last segment runs until EOS.
// Empty seg_len means one token per step.
struct CompositeTask {
  std::vector<int> steps;
  std::vector<int> seg_len;
};

inline constexpr int kDelimiterTask = -1;

class World {
 public:
  Vocab vocab;
  std::vector<Task> tasks;   // content tasks; index = internal task index
  Dist prior;                // aligned with tasks
  int n = 1;
  double b = 0.0;
  std::string floor_mode = "mix";  // "mix" or "validate"
  bool floor_applied = false;      // set by finalize once rows are mixed

  // Validates every invariant, applies the floor and freezes the world.
  void finalize();

  int num_tasks() const { return static_cast<int>(tasks.size()); }
  int task_index(int id) const;  // throws Config when unknown
  bool markov() const;

  // q(. | SOS o prefix, task). prefix excludes SOS. The row for the delimiter
  // task (kDelimiterTask) is the point mass on the delimiter.
  const Dist& row(int task, std::span<const int> prefix) const;
  double prob(int task, std::span<const int> prefix, int t) const {
    return row(task, prefix)[t];
  }
  // prefix of n-1 tokens: only EOS may follow
  bool at_cap(std::span<const int> prefix) const {
    return static_cast<int>(prefix.size()) >= n - 1;
  }

  std::uint64_t prefix_key(std::span<const int> prefix) const;

 private:
  const Dist& table_row(const Task& t, std::span<const int> prefix) const;
  Dist eos_row_, zero_row_, delim_row_;
};

// log q(seq | SOS o prefix, task). In prompt mode delimiter tokens are
// attributed to the delimiter task (factor 1) instead of the content task.
double seq_logprob(const World& w, int task, std::span<const int> prefix,
                   std::span<const int> seq, bool prompt_mode = false);

double doc_likelihood(const World& w, const Sequence& d, int task);
double doc_likelihood(const World& w, const Sequence& d, const CompositeTask& task);
double marginal_likelihood(const World& w, const Sequence& d);

// Chain product of conditionals. With a task: under that task. Without:
// mixture over the task posterior given x (law of total probability).
double cond_prob(const World& w, const Sequence& y, const Sequence& x,
                 std::optional<int> task = std::nullopt);
double cond_prob(const World& w, std::span<const int> y, std::span<const int> x,
                 std::optional<int> task = std::nullopt);

// q(. | SOS o prefix), marginal over the task posterior.
Dist next_token_marginal(const World& w, std::span<const int> prefix);

Sequence sample_document(const World& w, int task, Rng& rng);
Sequence sample_document(const World& w, const CompositeTask& task, Rng& rng);

inline constexpr std::size_t kEnumerationGuard = 1000000;

// Histories SOS o prefix with positive marginal mass, in DFS order.
std::vector<Sequence> enumerate_histories(const World& w);
// Same, as prefixes without SOS.
std::vector<Tokens> enumerate_prefixes(const World& w);
// All complete documents (ending in EOS) with positive marginal mass.
std::vector<Tokens> enumerate_documents(const World& w);

// World over a subset of tasks with the prior renormalized.
World restrict_tasks(const World& w, const std::vector<int>& task_indices);

}  // namespace promptlab
