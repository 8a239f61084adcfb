#pragma once

#include <cstdint>
#include <random>

namespace ihmm {

// Normal distribution scalar functions.
double norm_cdf(double x);        // Phi
double norm_pdf(double x);        // phi
double norm_quantile(double p);   // Phi^{-1}, Wichura AS 241, full double precision

// Stateless stream tags used to derive independent substreams from one master
// seed.  Every random draw in the sampler comes from a stream keyed by
// (seed, iteration, phase, unit), so results do not depend on thread count.
enum StreamTag : std::uint64_t {
  kInit = 1,
  kSlice = 2,
  kGrow = 3,
  kTraj = 4,
  kImpute = 5,
  kEmit = 6,
  kPsbp = 7,
  kSim = 8,
  kBaseline = 9,
};

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
                       std::uint64_t d = 0);

// A mt19937_64 engine with stateless draw helpers.  All non-uniform draws are
// built from u01() only (inverse-CDF normals, Marsaglia-Tsang gamma), so a
// stream consumes engine output in a reproducible way with no hidden caches.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  static RngStream derive(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0) {
    return RngStream(mix_seed(master, a, b, c));
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform on the open interval (0,1).
  double u01() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() { return norm_quantile(u01()); }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  double gamma(double shape);                       // unit rate
  double gamma_rate(double shape, double rate) { return gamma(shape) / rate; }
  double chisq(double df) { return 2.0 * gamma(0.5 * df); }

  // Index draw with probability proportional to w[0..n-1] (nonnegative).
  int categorical(const double* w, int n);

private:
  std::mt19937_64 eng_;
};

// Truncated normal draws.  Upper: X ~ N(mean, sd^2) given X <= upper;
// lower: given X >= lower.  Robust in both near and deep tails.
double rtnorm_upper(RngStream& rng, double mean, double sd, double upper);
double rtnorm_lower(RngStream& rng, double mean, double sd, double lower);

}  // namespace ihmm
