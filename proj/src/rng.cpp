#include "ihmm/rng.hpp"

#include <cmath>

#include "ihmm/errors.hpp"

namespace ihmm {

double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

// Wichura (1988) algorithm AS 241, PPND16.
double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw_numeric("QuantileDomain", "norm_quantile requires p in (0,1)");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    const double num =
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
              6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
            1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
          1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    const double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    return q * num / den;
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    const double num =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
            3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
          4.63033784615654529590e0) * r + 1.42343711074968357734e0);
    const double den =
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
          2.05319162663775882187e0) * r + 1.0);
    val = num / den;
  } else {
    r -= 5.0;
    const double num =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
          5.46378491116411436990e0) * r + 6.65790464350110377720e0);
    const double den =
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
    val = num / den;
  }
  return (q < 0.0) ? -val : val;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  // SplitMix64 finalizer chained over the key words.
  auto mix = [](std::uint64_t& s) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t s = a;
  std::uint64_t h = mix(s);
  s ^= b * 0xff51afd7ed558ccdULL;
  h ^= mix(s);
  s ^= c * 0xc4ceb9fe1a85ec53ULL;
  h ^= mix(s);
  s ^= d * 0x2545f4914f6cdd1dULL;
  h ^= mix(s);
  return h;
}

// Marsaglia-Tsang (2000).
double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw_numeric("GammaShape", "gamma shape must be positive");
  if (shape < 1.0) {
    // boost: G(a) = G(a+1) * U^{1/a}
    const double u = u01();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = u01();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

int RngStream::categorical(const double* w, int n) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += w[i];
  if (!(total > 0.0)) throw_numeric("CategoricalMass", "nonpositive total weight");
  double u = u01() * total;
  for (int i = 0; i < n; ++i) {
    u -= w[i];
    if (u <= 0.0) return i;
  }
  return n - 1;
}

namespace {

// Standard normal truncated to [a, inf).  Plain rejection when a is small,
// Robert (1995) translated-exponential rejection in the tail.
double rtnorm_std_lower(RngStream& rng, double a) {
  if (a < 0.45) {
    for (;;) {
      const double z = rng.normal();
      if (z >= a) return z;
    }
  }
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(rng.u01()) / lambda;
    const double diff = z - lambda;
    if (std::log(rng.u01()) <= -0.5 * diff * diff) return z;
  }
}

}  // namespace

double rtnorm_upper(RngStream& rng, double mean, double sd, double upper) {
  if (std::isinf(upper) && upper > 0) return rng.normal(mean, sd);
  const double c = (upper - mean) / sd;
  const double z = -rtnorm_std_lower(rng, -c);
  const double x = mean + sd * z;
  return (x <= upper) ? x : upper;  // guard FP round-up at the bound
}

double rtnorm_lower(RngStream& rng, double mean, double sd, double lower) {
  if (std::isinf(lower) && lower < 0) return rng.normal(mean, sd);
  const double c = (lower - mean) / sd;
  const double z = rtnorm_std_lower(rng, c);
  const double x = mean + sd * z;
  return (x >= lower) ? x : lower;
}

}  // namespace ihmm
