#pragma once

#include <utility>
#include <vector>

#include "promptlab/inference.hpp"
#include "promptlab/world.hpp"

namespace promptlab {

struct IclDemo {
  Tokens x, y;
};

struct IclPrompt {
  std::vector<IclDemo> demos;
  int delimiter = -1;
  Tokens query;
  Sequence flattened;  // x1 y1 delim ... xm ym delim query, width n

  int m() const { return static_cast<int>(demos.size()); }
  Tokens flat() const { return flattened.tokens(); }
  std::vector<int> x_lengths() const;
};

// Throws Overflow when the prompt exceeds `width`, Config for empty demo parts
// or parts containing the delimiter.
IclPrompt build_icl(const std::vector<IclDemo>& demos, int delimiter, const Tokens& query,
                    int width, int pad);
// Splits on the delimiter; x_lengths gives the input length of every demo.
IclPrompt parse_icl(const Sequence& flattened, int delimiter, const std::vector<int>& x_lengths);

struct CotDemo {
  Tokens x;
  std::vector<Tokens> steps;
};

struct CotPrompt {
  std::vector<CotDemo> demos;
  int delimiter = -1;
  Tokens query;
  Sequence flattened;

  int m() const { return static_cast<int>(demos.size()); }
  int L() const { return demos.empty() ? 0 : static_cast<int>(demos.front().steps.size()); }
  Tokens flat() const { return flattened.tokens(); }
};

CotPrompt build_cot(const std::vector<CotDemo>& demos, int delimiter, const Tokens& query,
                    int width, int pad);
CotPrompt parse_cot(const Sequence& flattened, int delimiter, const std::vector<int>& x_lengths,
                    const std::vector<std::vector<int>>& step_lengths);

// max |log q(t | h o delim o s) - log q(t | s)| over tasks, t in E and
// delimiter-free-or-not h, s with l(h)+l(s)+1 <= budget; the budget is
// clipped to n-2 so that no compared position sits at the length cap.
double estimate_phi(const World& w, int budget);

// max over tasks and reachable prefixes of TV(q(.|h,theta), q~(.|h,theta)).
double estimate_varphi(const World& pre, const World& shifted);

// max_{i,j} q(theta_i) / q(theta_j)
double prior_imbalance(const World& w);

struct EpsilonIcl {
  double epsilon = 0.0;
  double query_ambiguity = 0.0;
  std::vector<double> demo_ambiguity;
};

// (1/(1-A(x))) * max_i A(x_i o y_i)/(1-A(x_i o y_i)); demo ambiguities are
// computed from SOS, with an empty demo list giving 0.
EpsilonIcl epsilon_icl_detail(const World& w, const IclPrompt& p);
double epsilon_icl(const World& w, const IclPrompt& p);

}  // namespace promptlab
