#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "promptlab/cot.hpp"
#include "promptlab/prompts.hpp"
#include "promptlab/world.hpp"

namespace promptlab {

struct BoundInputs {
  int V_size = 0;
  int n = 0;
  double N = 0;       // corpus size; 0 selects the exact-q regime (statistical terms 0)
  int d = 0;
  double M = 0;       // number of history-token pairs
  int r = 1;          // response length
  double delta = 0.5;
  int m = 0;
  int K = 1, L = 1;
  double phi = 0, varphi = 0, c = 1, c1 = 1, c2 = 1, epsilon = 0;
  double delta_mismatch = 0, M_recip = 0, ambiguity = 0;
};

struct Component {
  std::string label;
  double value = 0.0;
};
using Components = std::vector<Component>;

double component(const Components& cs, const std::string& label);  // throws when absent

// Labels: main_poly, main_conc, main, appendix, rademacher, response_main.
// Overflow shows up as +inf.
Components rhs_pretraining(const BoundInputs& in);

// Labels: stat, rphi, rphi_exact, decay.
Components rhs_icl(const BoundInputs& in);

// Labels: stat, rphi, rphi_exact, mismatch, C, decay. Throws Divergence when
// c1*eps >= 1 (unless the K sentinel L+1 is set, which zeroes the decay).
Components rhs_cot(const BoundInputs& in, bool shifted);

struct BoundReport {
  std::string run_id;
  BoundInputs in;
  double measured = 0.0;
  Components rhs;
  double rhs_total = 0.0;  // excludes the statistical term
  double slack = 0.0;
  std::map<std::string, double> extra;  // posterior concentration, full-Theta constants, ...
};

// All responses of length r over the emission set with EOS only in the last
// position, in lexicographic order, capped at `cap` entries.
std::vector<Tokens> response_set(const World& w, int r, std::size_t cap = 10000);

BoundReport run_zero_shot(const World& w, const Tokens& x, const std::vector<Tokens>& y_set);

struct IclConfig {
  std::string run_id = "icl";
  std::vector<IclDemo> demos;  // cycled when m exceeds their number
  int delimiter = -1;
  Tokens query;
  std::vector<Tokens> y_set;
};

// Runs cells m = m_lo..m_hi. Assumption failures throw AssumptionViolation.
std::vector<BoundReport> run_icl_sweep(const World& w, const IclConfig& cfg, int m_lo, int m_hi,
                                       int parallel = 1);

struct CotConfig {
  std::string run_id = "cot";
  std::vector<CotDemo> demos;
  int delimiter = -1;
  Tokens query;
  std::vector<int> step_len;      // response layout, one length per step
  std::vector<Tokens> y_set;      // each of total length sum(step_len)
};

std::vector<BoundReport> run_cot_sweep(const World& pre, const CotWorld& cw, const CotConfig& cfg,
                                       int m_lo, int m_hi, int parallel = 1);

struct PropositionReport {
  int trials = 0;
  long checks_monotonicity = 0, checks_contraction = 0, checks_entropy = 0, checks_pinsker = 0;
  long checks_conditional = 0, premise_held = 0, conditional_cases = 0;
  long violations_monotonicity = 0, violations_contraction = 0, violations_entropy = 0;
  long violations_pinsker = 0, violations_conditional = 0;
  // smallest (rhs - lhs) seen per check
  double worst_monotonicity = kInf, worst_contraction = kInf, worst_entropy = kInf;
  double worst_pinsker = kInf, worst_conditional = kInf;
  long violations() const {
    return violations_monotonicity + violations_contraction + violations_entropy +
           violations_pinsker + violations_conditional;
  }
};

struct WorldFamily {
  int max_content = 4;   // |E| <= max_content + 1
  int max_tasks = 4;
  int max_n = 6;
  double tolerance = 1e-9;
};

// Random enumerable world (Markov or table backend) for property checks.
World random_world(Rng& rng, const WorldFamily& fam);

PropositionReport verify_propositions(const WorldFamily& fam, int trials, std::uint64_t seed);

// CSV with the fixed column set; '.' decimal and 17 significant digits.
std::string bounds_csv(const std::vector<BoundReport>& rows);
std::string report_json(const BoundReport& r);  // JSON object text
std::string propositions_json(const PropositionReport& r);

}  // namespace promptlab
