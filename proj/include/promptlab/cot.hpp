#pragma once

#include <optional>
#include <vector>

#include "promptlab/inference.hpp"
#include "promptlab/prompts.hpp"
#include "promptlab/world.hpp"

namespace promptlab {

// How the task generating each demo input (and the query) depends on the
// composite task.
enum class QueryTaskMode {
  Prior,  // q(theta^(i) | composite) = pretraining prior, independent of the composite
  Tied,   // theta^(i) = first step of the composite
  Table,  // explicit distribution per composite
};

struct CotWorld {
  World base;                             // pretraining world q
  int L = 1;
  std::vector<std::vector<int>> composites;  // support of q~ (task indices per step)
  Dist composite_prior;                   // q~ over `composites`
  QueryTaskMode query_mode = QueryTaskMode::Prior;
  std::vector<Dist> query_table;          // per composite, over base tasks (Table mode)
  std::vector<World> step_worlds;         // q~_1..q~_L; empty means base for every step
  std::optional<World> query_world;       // q~_0; base when absent

  const World& step_world(int j) const {
    return step_worlds.empty() ? base : step_worlds.at(j);
  }
  const World& input_world() const { return query_world ? *query_world : base; }
  bool shifted() const { return !step_worlds.empty() || query_world.has_value(); }
  // distribution q(theta^(i) | composite) over base tasks
  Dist query_dist(const std::vector<int>& steps, int composite_index) const;
  // probability of `steps` under q~ (0 outside the declared support)
  double prior_of(const std::vector<int>& steps) const;

  void validate() const;
};

// log q~(P | composite). `use_shift` selects the step worlds for the y parts;
// otherwise the base world is used throughout.
double cot_loglik(const CotWorld& cw, const CotPrompt& p, const std::vector<int>& steps,
                  int composite_index, bool use_shift = true);

// Posterior over the declared composite support; support holds indices into
// cw.composites.
Posterior composite_posterior(const CotWorld& cw, const CotPrompt& p);

// log q(Y | SOS o prefix, composite) for an L-step response with the given
// per-step lengths.
double response_logprob(const CotWorld& cw, const Tokens& prefix, const Tokens& Y,
                        const std::vector<int>& step_len, const std::vector<int>& steps,
                        bool use_shift);

int hamming(const std::vector<int>& a, const std::vector<int>& b);

// S(P): indices of composites with positive prior and likelihood > 1e-300.
std::vector<int> support_set(const CotWorld& cw, const CotPrompt& p);

// min pairwise Hamming distance within S(P); L+1 for a singleton support.
int k_separation(const CotWorld& cw, const CotPrompt& p);

// Sum over F(P) subset of Theta^L of |q~ - stationary q|.
double prior_mismatch(const World& pre, const CotWorld& cw, const CotPrompt& p);

// max{1/q(P), 1/q~(P)}
double M_recip(const World& pre, const CotWorld& cw, const CotPrompt& p);

struct CotStepReport {
  std::vector<std::vector<int>> candidates;  // Theta_j, per step
  std::vector<int> theta_star;               // step-wise dominated task (empty if demos disagree)
  std::vector<std::vector<int>> per_demo_star;  // [demo][step]
  bool consistent = true;
  double epsilon = 0.0;        // over candidate sets
  double epsilon_full = 0.0;   // over all of Theta
  double c1_global = 1.0;      // prior ratio over S(P)
  double c1_local = 1.0;       // local posterior ratio over candidate sets
  double c1_local_full = 1.0;  // local posterior ratio over all of Theta
  double c2 = 0.0;
  double c1() const { return std::max(c1_global, c1_local); }
};

// Step ambiguities, dominated tasks and regularity constants. `S` is the
// support set from support_set().
CotStepReport cot_step_analysis(const CotWorld& cw, const CotPrompt& p, const std::vector<int>& S);

// Worst step ratio A/(1-A) over candidate sets (or all tasks when
// `candidates` is empty).
double epsilon_cot(const World& w, const CotPrompt& p,
                   const std::vector<std::vector<int>>& candidates = {});

}  // namespace promptlab
