#include "promptlab/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

namespace promptlab {

const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Assumption: return "assumption";
    case ErrorKind::Overflow: return "length-overflow";
    case ErrorKind::ZeroEvidence: return "zero-evidence";
    case ErrorKind::Guard: return "explosion-guard";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Certification: return "certification";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::Domain: return "domain";
  }
  return "unknown";
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t root, std::uint64_t counter) {
  return Rng(splitmix64(splitmix64(root) ^ splitmix64(counter + 0x51ed27ULL)));
}

int Rng::range(int lo, int hi) {
  auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<int>(next() % span);
}

double Rng::normal() {
  // Box-Muller; u1 in (0,1]
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double logsumexp(const std::vector<double>& v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

std::string fmt_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

}  // namespace promptlab
