#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ihmm/emissions.hpp"
#include "ihmm/errors.hpp"
#include "ihmm/rng.hpp"

using namespace ihmm;

namespace {

// Kolmogorov-Smirnov distance of a sample against a cdf; threshold at the
// alpha=0.001 asymptotic critical value.
template <typename Cdf>
bool ks_ok(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max(d, std::fabs((i + 1) / n - f));
    d = std::max(d, std::fabs(i / n - f));
  }
  return d < 1.9495 / std::sqrt(n);
}

// Batch-means standard error for a correlated chain.
double batch_se(const std::vector<double>& x) {
  const int nb = 30;
  const int bl = static_cast<int>(x.size()) / nb;
  std::vector<double> bm(nb, 0.0);
  for (int b = 0; b < nb; ++b) {
    for (int i = 0; i < bl; ++i) bm[b] += x[b * bl + i];
    bm[b] /= bl;
  }
  double m = 0.0;
  for (double v : bm) m += v;
  m /= nb;
  double s2 = 0.0;
  for (double v : bm) s2 += (v - m) * (v - m);
  s2 /= (nb - 1);
  return std::sqrt(s2 / nb);
}

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / x.size();
}

double sd_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s2 = 0.0;
  for (double v : x) s2 += (v - m) * (v - m);
  return std::sqrt(s2 / (x.size() - 1));
}

arma::mat random_spd(int p, RngStream& rng) {
  arma::mat A(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) A(i, j) = rng.normal();
  return A * A.t() + 0.5 * arma::eye(p, p);
}

}  // namespace

TEST_CASE("p=1 prior covariance draws match the inverse-gamma moment") {
  // IW(nu=3, scale=1) in one dimension is InvGamma(1.5, 0.5) with mean 1.
  NiwHyper h = NiwHyper::defaults(1);
  h.nu = 3.0;
  RngStream rng(101);
  const int n = 100000;
  std::vector<double> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) draws.push_back(sample_prior(h, rng).sigma(0, 0));
  const double se = sd_of(draws) / std::sqrt(double(n));
  CHECK(std::fabs(mean_of(draws) - 1.0) < 3.0 * se);
}

TEST_CASE("default prior has identity expected covariance") {
  const int p = 3;
  NiwHyper h = NiwHyper::defaults(p);
  RngStream rng(102);
  const int n = 100000;
  arma::mat m(p, p, arma::fill::zeros);
  arma::mat m2(p, p, arma::fill::zeros);
  for (int i = 0; i < n; ++i) {
    const EmissionParams par = sample_prior(h, rng);
    m += par.sigma;
    m2 += arma::square(par.sigma);
  }
  m /= n;
  m2 /= n;
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) {
      const double target = (a == b) ? 1.0 : 0.0;
      const double se = std::sqrt((m2(a, b) - m(a, b) * m(a, b)) / n);
      CHECK(std::fabs(m(a, b) - target) < 3.0 * se);
    }
  }
}

TEST_CASE("large lambda pins the prior mean draws to mu0") {
  NiwHyper h = NiwHyper::defaults(2);
  h.mu0 = arma::vec{1.5, -2.0};
  h.lambda = 1e12;
  RngStream rng(103);
  for (int i = 0; i < 200; ++i) {
    const EmissionParams par = sample_prior(h, rng);
    CHECK(arma::norm(par.mu - h.mu0) < 1e-4);
  }
}

TEST_CASE("prior covariance draws are symmetric positive-definite") {
  NiwHyper h = NiwHyper::defaults(3);
  RngStream rng(104);
  for (int i = 0; i < 500; ++i) {
    const EmissionParams par = sample_prior(h, rng);
    CHECK(arma::norm(par.sigma - par.sigma.t(), "fro") < 1e-10);
    arma::vec ev = arma::eig_sym(par.sigma);
    CHECK(ev.min() > 0.0);
  }
}

TEST_CASE("log density reference points") {
  EmissionParams par;
  par.mu = arma::vec{0.3, -0.7};
  par.sigma = arma::eye(2, 2);
  CHECK(logpdf(par.mu, par) == doctest::Approx(-std::log(2.0 * M_PI)).epsilon(1e-14));
  CHECK(logpdf(par.mu + arma::vec{1.0, 0.0}, par) ==
        doctest::Approx(-std::log(2.0 * M_PI) - 0.5).epsilon(1e-14));
}

TEST_CASE("log density matches a dense-inverse oracle") {
  RngStream rng(105);
  for (int rep = 0; rep < 50; ++rep) {
    EmissionParams par;
    par.sigma = random_spd(3, rng);
    par.mu = arma::vec{rng.normal(), rng.normal(), rng.normal()};
    const arma::vec y{rng.normal(2.0, 3.0), rng.normal(), rng.normal(-1.0, 0.5)};
    const arma::mat inv = arma::inv(par.sigma);
    const double logdet = std::log(arma::det(par.sigma));
    const arma::vec d = y - par.mu;
    const double oracle = -0.5 * (3.0 * std::log(2.0 * M_PI) + logdet +
                                  arma::as_scalar(d.t() * inv * d));
    CHECK(logpdf(y, par) == doctest::Approx(oracle).epsilon(1e-10));
  }
  CHECK_THROWS_AS(
      logpdf(arma::vec{std::nan(""), 0.0, 0.0},
             EmissionParams{arma::zeros(3), arma::eye(3, 3)}),
      Error);
}

TEST_CASE("posterior update with no data reduces to the prior draw") {
  NiwHyper h = NiwHyper::defaults(2);
  RngStream a(106), b(106);
  const EmissionParams x = posterior_update(h, arma::mat(0, 2), a);
  const EmissionParams y = sample_prior(h, b);
  CHECK(arma::approx_equal(x.mu, y.mu, "absdiff", 0.0));
  CHECK(arma::approx_equal(x.sigma, y.sigma, "absdiff", 0.0));
}

TEST_CASE("single centered datum keeps the location posterior symmetric") {
  NiwHyper h = NiwHyper::defaults(1);
  RngStream rng(107);
  arma::mat Y(1, 1, arma::fill::zeros);
  const int n = 60000;
  std::vector<double> mus;
  mus.reserve(n);
  for (int i = 0; i < n; ++i) mus.push_back(posterior_update(h, Y, rng).mu(0));
  const double se = sd_of(mus) / std::sqrt(double(n));
  CHECK(std::fabs(mean_of(mus)) < 3.0 * se);
}

TEST_CASE("posterior matches a two-dimensional grid quadrature oracle") {
  // Independent route to the same posterior: integrate
  // prior(mu, s2) * likelihood(y | mu, s2) on a grid, no conjugacy formulas.
  NiwHyper h = NiwHyper::defaults(1);
  const int n = 50;
  arma::mat Y(n, 1);
  for (int i = 0; i < n; ++i) Y(i, 0) = 1.2 + 0.8 * std::sin(3.7 * i + 0.4);

  const int G = 400;
  double post_mass = 0.0, post_mu = 0.0, post_mu2 = 0.0;
  for (int a = 0; a < G; ++a) {
    const double mu = 0.5 + 1.4 * (a + 0.5) / G;  // covers the posterior bulk
    for (int b = 0; b < G; ++b) {
      const double ls = std::log(0.05) + (std::log(3.0) - std::log(0.05)) * (b + 0.5) / G;
      const double s2 = std::exp(ls);
      // prior: mu|s2 ~ N(0, s2/lambda); s2 ~ IG(nu/2, scale/2); grid in log s2
      double lp = -0.5 * std::log(s2 / h.lambda) - 0.5 * mu * mu / (s2 / h.lambda);
      lp += -(h.nu / 2.0) * std::log(s2) - 0.5 * h.scale(0, 0) / s2;  // + log-Jacobian s2
      for (int i = 0; i < n; ++i) {
        const double d = Y(i, 0) - mu;
        lp += -0.5 * std::log(s2) - 0.5 * d * d / s2;
      }
      const double w = std::exp(lp - (-40.0));
      post_mass += w;
      post_mu += w * mu;
      post_mu2 += w * mu * mu;
    }
  }
  const double oracle_mean = post_mu / post_mass;
  const double oracle_var = post_mu2 / post_mass - oracle_mean * oracle_mean;

  RngStream rng(108);
  const int m = 200000;
  std::vector<double> mus;
  mus.reserve(m);
  for (int i = 0; i < m; ++i) mus.push_back(posterior_update(h, Y, rng).mu(0));
  const double mc_mean = mean_of(mus);
  const double mc_sd = sd_of(mus);
  CHECK(std::fabs(mc_mean - oracle_mean) / std::fabs(oracle_mean) < 0.02);
  CHECK(std::fabs(mc_sd * mc_sd - oracle_var) / oracle_var < 0.02);
}

TEST_CASE("prior and successive-conditional moments agree") {
  // Simulate data given parameters, redraw parameters given data, repeat;
  // the marginal law of the parameters must stay the prior.
  NiwHyper h = NiwHyper::defaults(1);
  h.mu0 = arma::vec{0.3};
  h.lambda = 2.0;
  h.nu = 7.0;       // keeps Var(sigma2) finite
  h.scale = arma::mat{2.0};

  const int M = 40000;
  RngStream pr(109);
  std::vector<double> pmu, ps2;
  for (int i = 0; i < M; ++i) {
    const EmissionParams par = sample_prior(h, pr);
    pmu.push_back(par.mu(0));
    ps2.push_back(par.sigma(0, 0));
  }
  RngStream sc(110);
  EmissionParams par = sample_prior(h, sc);
  std::vector<double> cmu, cs2;
  for (int i = 0; i < M; ++i) {
    arma::mat Y(5, 1);
    for (int k = 0; k < 5; ++k) Y(k, 0) = sc.normal(par.mu(0), std::sqrt(par.sigma(0, 0)));
    par = posterior_update(h, Y, sc);
    cmu.push_back(par.mu(0));
    cs2.push_back(par.sigma(0, 0));
  }
  auto compare = [](const std::vector<double>& prior_x, const std::vector<double>& chain_x) {
    const double se_p = sd_of(prior_x) / std::sqrt(double(prior_x.size()));
    const double se_c = batch_se(chain_x);
    const double se = std::sqrt(se_p * se_p + se_c * se_c);
    CHECK(std::fabs(mean_of(prior_x) - mean_of(chain_x)) < 3.0 * se);
  };
  compare(pmu, cmu);
  compare(ps2, cs2);
  std::vector<double> pmu2 = pmu, cmu2 = cmu;
  for (double& v : pmu2) v *= v;
  for (double& v : cmu2) v *= v;
  compare(pmu2, cmu2);
}

TEST_CASE("identity covariance transfers no information across coordinates") {
  EmissionParams par;
  par.mu = arma::vec{1.0, 2.0, 3.0};
  par.sigma = arma::eye(3, 3);
  const ConditionalGaussian g =
      conditional_gaussian(par, arma::uvec{1}, arma::vec{9.0});
  REQUIRE(g.miss_idx.n_elem == 2);
  CHECK(g.miss_idx(0) == 0);
  CHECK(g.miss_idx(1) == 2);
  CHECK(g.mean(0) == doctest::Approx(1.0));
  CHECK(g.mean(1) == doctest::Approx(3.0));
  CHECK(arma::approx_equal(g.cov, arma::eye(2, 2), "absdiff", 1e-14));
}

TEST_CASE("bivariate conditional matches the closed form") {
  EmissionParams par;
  par.mu = arma::zeros(2);
  par.sigma = arma::mat{{1.0, 0.5}, {0.5, 1.0}};
  const ConditionalGaussian g =
      conditional_gaussian(par, arma::uvec{0}, arma::vec{1.0});
  CHECK(g.mean(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(g.cov(0, 0) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("conditioning never inflates eigenvalues") {
  RngStream rng(111);
  for (int rep = 0; rep < 100; ++rep) {
    EmissionParams par;
    par.sigma = random_spd(4, rng);
    par.mu = arma::zeros(4);
    const ConditionalGaussian g =
        conditional_gaussian(par, arma::uvec{0, 2}, arma::vec{0.3, -0.4});
    const arma::mat marg = par.sigma.submat(g.miss_idx, g.miss_idx);
    const arma::vec ev_c = arma::sort(arma::eig_sym(g.cov));
    const arma::vec ev_m = arma::sort(arma::eig_sym(marg));
    for (arma::uword i = 0; i < ev_c.n_elem; ++i) CHECK(ev_c(i) <= ev_m(i) + 1e-12);
    CHECK(ev_c.min() > -1e-12);
  }
}

TEST_CASE("sequential conditioning composes to one-shot conditioning") {
  RngStream rng(112);
  for (int rep = 0; rep < 50; ++rep) {
    EmissionParams par;
    par.sigma = random_spd(5, rng);
    par.mu = arma::vec{0.1, -0.2, 0.3, -0.4, 0.5};
    // observe {1, 3}; missing {0, 2, 4}; then also fix coordinate 2.
    const arma::vec y_obs{0.7, -1.1};
    const double y2 = 0.25;
    const ConditionalGaussian one =
        conditional_gaussian(par, arma::uvec{1, 2, 3}, arma::vec{0.7, y2, -1.1});

    const ConditionalGaussian first =
        conditional_gaussian(par, arma::uvec{1, 3}, y_obs);
    EmissionParams reduced{first.mean, first.cov};   // coords {0, 2, 4}
    const ConditionalGaussian second =
        conditional_gaussian(reduced, arma::uvec{1}, arma::vec{y2});  // fix coord 2

    REQUIRE(one.mean.n_elem == 2);
    CHECK(arma::approx_equal(one.mean, second.mean, "absdiff", 1e-10));
    CHECK(arma::approx_equal(one.cov, second.cov, "absdiff", 1e-10));
  }
}

TEST_CASE("singular observed block is reported") {
  EmissionParams par;
  par.mu = arma::zeros(3);
  par.sigma = arma::ones(3, 3);  // rank one
  par.sigma.diag() += 0.0;
  try {
    conditional_gaussian(par, arma::uvec{0, 1}, arma::vec{1.0, 1.0});
    FAIL("expected SingularObservedBlock");
  } catch (const Error& e) {
    CHECK(e.code == "SingularObservedBlock");
    CHECK(e.kind == ErrorKind::Numeric);
  }
}

TEST_CASE("univariate truncated draw matches the inverse Mills ratio") {
  RngStream rng(113);
  const double c = -1.14;
  const int n = 100000;
  std::vector<double> xs;
  xs.reserve(n);
  for (int i = 0; i < n; ++i) {
    const arma::vec x = sample_truncated_mvn(arma::zeros(1), arma::eye(1, 1),
                                             arma::vec{c}, rng);
    REQUIRE(x(0) <= c);
    xs.push_back(x(0));
  }
  const double expect = -norm_pdf(c) / norm_cdf(c);
  const double se = sd_of(xs) / std::sqrt(double(n));
  CHECK(std::fabs(mean_of(xs) - expect) < 4.0 * se);
}

TEST_CASE("unbounded truncated sampler equals the plain mvn") {
  RngStream rng(114);
  arma::mat cov{{2.0, 0.8}, {0.8, 1.0}};
  arma::vec mean{0.5, -0.5};
  const double inf = std::numeric_limits<double>::infinity();
  const int n = 20000;
  std::vector<double> x0, x1;
  for (int i = 0; i < n; ++i) {
    const arma::vec x = sample_truncated_mvn(mean, cov, arma::vec{inf, inf}, rng);
    x0.push_back(x(0));
    x1.push_back(x(1));
  }
  CHECK(ks_ok(x0, [&](double v) { return norm_cdf((v - 0.5) / std::sqrt(2.0)); }));
  CHECK(ks_ok(x1, [&](double v) { return norm_cdf((v + 0.5) / 1.0); }));
}

TEST_CASE("diagonal covariance margins match univariate truncated normals") {
  RngStream rng(115);
  arma::mat cov = arma::diagmat(arma::vec{1.0, 4.0});
  arma::vec mean{0.0, 1.0};
  arma::vec upper{0.5, -1.0};
  const int n = 20000;
  std::vector<double> x0, x1;
  for (int i = 0; i < n; ++i) {
    const arma::vec x = sample_truncated_mvn(mean, cov, upper, rng);
    REQUIRE(x(0) <= upper(0));
    REQUIRE(x(1) <= upper(1));
    x0.push_back(x(0));
    x1.push_back(x(1));
  }
  auto trunc_cdf = [](double v, double m, double s, double c) {
    return norm_cdf((v - m) / s) / norm_cdf((c - m) / s);
  };
  CHECK(ks_ok(x0, [&](double v) { return trunc_cdf(v, 0.0, 1.0, 0.5); }));
  CHECK(ks_ok(x1, [&](double v) { return trunc_cdf(v, 1.0, 2.0, -1.0); }));
}

TEST_CASE("correlated truncated draws always respect their bounds") {
  RngStream seed_rng(116);
  for (int rep = 0; rep < 20; ++rep) {
    arma::mat cov = random_spd(3, seed_rng);
    arma::vec mean{seed_rng.normal(), seed_rng.normal(), seed_rng.normal()};
    arma::vec upper{mean(0) - 1.0, std::numeric_limits<double>::infinity(), mean(2) + 0.5};
    for (int i = 0; i < 200; ++i) {
      const arma::vec x = sample_truncated_mvn(mean, cov, upper, seed_rng);
      CHECK(x(0) <= upper(0));
      CHECK(x(2) <= upper(2));
      CHECK(x.is_finite());
    }
  }
}
