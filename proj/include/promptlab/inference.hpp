#pragma once

#include <span>
#include <vector>

#include "promptlab/world.hpp"

namespace promptlab {

struct Posterior {
  std::vector<int> support;  // task indices (atomic) or composite indices
  Dist weights;
};

struct AmbiguityReport {
  int dominated_task = -1;
  double ambiguity = 0.0;
  double entropy = 0.0;  // nats
};

// weights proportional to q(theta) q(history o x | SOS, theta), i.e. the task
// posterior given the concatenated context. Delimiter tokens are attributed to
// the delimiter task.
Posterior posterior(const World& w, std::span<const int> x, std::span<const int> history = {});
Posterior posterior(const World& w, const Sequence& x);
Posterior posterior(const World& w, const Sequence& x, const Sequence& history);

// Normalizes log joint weights; throws ZeroEvidence when all are -inf.
Dist normalize_log(const std::vector<double>& logw);

AmbiguityReport summarize(const Posterior& p);
AmbiguityReport ambiguity(const World& w, std::span<const int> x, std::span<const int> history = {});
AmbiguityReport ambiguity(const World& w, const Sequence& x);
AmbiguityReport ambiguity(const World& w, const Sequence& x, const Sequence& history);

// 1 - max of the posterior weights over `subset` (task indices); the weights are
// not renormalized.
double ambiguity_over(const Posterior& p, const std::vector<int>& subset);

double entropy(const Dist& p);
double kl(const Dist& p, const Dist& q);
double tv(const Dist& p, const Dist& q);

}  // namespace promptlab
