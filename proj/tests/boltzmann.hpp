#pragma once
// Random vector pairs for the Boltzmann separation property, and a
// high-precision reference for the operator. Gaps can be as small as e^{-2 rho}
// with rho near 80, far below double resolution, so the reference uses 100
// decimal digits.

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <vector>

#include "promptlab/common.hpp"
#include "promptlab/transformer.hpp"

namespace boltzmann {

using Big = boost::multiprecision::cpp_bin_float_100;

struct Case {
  int d = 1;
  double varrho = 0, rho = 0;
  std::vector<double> a, b;
};

inline Big boltz_big(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  Big num = 0, den = 0;
  for (double x : v) {
    const Big w = boost::multiprecision::exp(Big(x) - Big(mx));
    num += Big(x) * w;
    den += w;
  }
  return num / den;
}

inline bool is_permutation(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

// Both vectors are drawn from one pool whose consecutive values are more than
// varrho apart, so entries are either shared or far apart.
inline Case draw(promptlab::Rng& rng) {
  Case c;
  c.d = rng.range(1, 8);
  c.varrho = 2 * std::log(static_cast<double>(c.d)) + 3 + rng.uniform(0.01, 1.0);
  const int pool_size = std::max(2, rng.range(c.d, 2 * c.d));
  std::vector<double> pool{0.0};
  for (int i = 1; i < pool_size; ++i) pool.push_back(pool.back() + c.varrho + rng.uniform(1e-3, 2.0));
  const double mid = 0.5 * (pool.front() + pool.back()) + rng.uniform(-1.0, 1.0);
  for (auto& v : pool) v -= mid;
  for (double v : pool) c.rho = std::max(c.rho, std::fabs(v));
  while (true) {
    auto subset = [&](int size) {
      std::vector<double> p = pool, out;
      for (int i = 0; i < size; ++i) {
        const int k = rng.range(i, static_cast<int>(p.size()) - 1);
        std::swap(p[i], p[k]);
        out.push_back(p[i]);
      }
      return out;
    };
    const int cap = std::min(c.d, pool_size);
    c.a = subset(rng.range(1, cap));
    c.b = subset(rng.range(1, cap));
    if (!is_permutation(c.a, c.b)) break;
  }
  return c;
}

inline promptlab::Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const promptlab::Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct Outcome {
  bool separated = false;  // reference gap above the bound
  bool bounded = false;    // library values within rho
  bool double_resolves = false;  // double-precision gap also above the bound
};

inline Outcome check(const Case& c) {
  Outcome o;
  const Big gap = boost::multiprecision::abs(boltz_big(c.a) - boltz_big(c.b));
  const double ld = std::log(static_cast<double>(c.d));
  const Big bound = Big(ld * ld) * boost::multiprecision::exp(Big(-2 * c.rho));
  o.separated = gap > bound;
  const double ba = promptlab::boltz(to_vec(c.a)), bb = promptlab::boltz(to_vec(c.b));
  o.bounded = std::fabs(ba) <= c.rho && std::fabs(bb) <= c.rho;
  o.double_resolves = Big(std::fabs(ba - bb)) > bound;
  return o;
}

}  // namespace boltzmann
