#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace promptlab {

using Tokens = std::vector<int>;
using Dist = std::vector<double>;

enum class ErrorKind {
  Config,          // malformed or invalid input files / arguments
  Assumption,      // a named precondition failed
  Overflow,        // length overflow
  ZeroEvidence,    // all likelihoods vanish
  Guard,           // enumeration explosion guard
  Shape,           // dimension mismatch
  Certification,   // transformer construction certificate failed
  Divergence,      // bound constant undefined (c1 * eps >= 1)
  Domain,          // invalid numeric argument
};

const char* error_kind_name(ErrorKind k);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Assumption failures carry the assumption name so callers can report it.
class AssumptionViolation : public Error {
 public:
  AssumptionViolation(std::string assumption, const std::string& detail)
      : Error(ErrorKind::Assumption, assumption + ": " + detail),
        assumption_(std::move(assumption)) {}
  const std::string& assumption() const { return assumption_; }

 private:
  std::string assumption_;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Deterministic RNG. Uniform doubles are built from raw 64-bit output so the
// stream does not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  std::uint64_t next() { return eng_(); }
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // integer in [lo, hi]
  int range(int lo, int hi);
  double normal();
  // stream for cell `counter` of a run seeded with `root`
  static Rng derive(std::uint64_t root, std::uint64_t counter);

 private:
  std::mt19937_64 eng_;
};

std::uint64_t splitmix64(std::uint64_t x);

double logsumexp(const std::vector<double>& v);

// locale-free shortest round-trip formatting with 17 significant digits
std::string fmt_double(double x);

}  // namespace promptlab
