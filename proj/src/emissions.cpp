#include "ihmm/emissions.hpp"

#include <cmath>

#include "ihmm/errors.hpp"

namespace ihmm {

NiwHyper NiwHyper::defaults(int p) {
  NiwHyper h;
  h.mu0 = arma::zeros(p);
  h.lambda = 10.0;
  h.nu = p + 2.0;
  h.scale = arma::eye(p, p);
  return h;
}

void NiwHyper::validate() const {
  const int d = p();
  if (d < 1) throw_config("DimensionMismatch", "mu0 must be nonempty");
  if (!(lambda > 0.0)) throw_config("DimensionMismatch", "lambda must be positive");
  if (!(nu > d - 1.0)) throw_config("DimensionMismatch", "nu must exceed p-1");
  if (static_cast<int>(scale.n_rows) != d || static_cast<int>(scale.n_cols) != d) {
    throw_config("DimensionMismatch", "scale must be p x p");
  }
  arma::mat L;
  if (!arma::chol(L, scale, "lower")) {
    throw_config("DimensionMismatch", "scale must be positive-definite");
  }
}

namespace {

// Bartlett factor: A lower-triangular with A_ii^2 ~ chisq(df - i) (0-based i)
// and subdiagonal N(0,1); then L A spans Wishart(df, L L').  Fill order is
// fixed so the draw consumes rng reproducibly.
arma::mat bartlett_lower(int p, double df, RngStream& rng) {
  arma::mat A(p, p, arma::fill::zeros);
  for (int i = 0; i < p; ++i) {
    A(i, i) = std::sqrt(rng.chisq(df - i));
    for (int j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  return A;
}

// Sigma ~ IW(nu, scale): draw W ~ Wishart(nu, scale^{-1}) and invert, all via
// triangular factors so Sigma stays symmetric positive-definite.
arma::mat sample_inverse_wishart(const arma::mat& scale, double nu, RngStream& rng) {
  const int p = static_cast<int>(scale.n_rows);
  arma::mat Ls;
  if (!arma::chol(Ls, scale, "lower")) {
    throw_numeric("SingularObservedBlock", "inverse-Wishart scale not positive-definite");
  }
  const arma::mat A = bartlett_lower(p, nu, rng);
  // With scale = Ls Ls', Sigma = (Ls A^{-T})(Ls A^{-T})' inverts to
  // Ls^{-T} A A' Ls^{-1} ~ Wishart(nu, scale^{-1}), i.e. Sigma ~ IW(nu, scale).
  const arma::mat Ainv = arma::solve(arma::trimatl(A), arma::eye(p, p));
  const arma::mat B = Ls * Ainv.t();
  arma::mat sigma = B * B.t();
  return 0.5 * (sigma + sigma.t());
}

arma::vec sample_mvn(const arma::vec& mean, const arma::mat& cov, RngStream& rng) {
  arma::mat L;
  if (!arma::chol(L, cov, "lower")) {
    throw_numeric("SingularObservedBlock", "covariance not positive-definite");
  }
  arma::vec z(mean.n_elem);
  for (arma::uword i = 0; i < z.n_elem; ++i) z(i) = rng.normal();
  return mean + L * z;
}

}  // namespace

EmissionParams sample_prior(const NiwHyper& h, RngStream& rng) {
  EmissionParams out;
  out.sigma = sample_inverse_wishart(h.scale, h.nu, rng);
  out.mu = sample_mvn(h.mu0, out.sigma / h.lambda, rng);
  return out;
}

MvnDensity::MvnDensity(const EmissionParams& params) : mu_(params.mu) {
  if (!arma::chol(L_, params.sigma, "lower")) {
    throw_numeric("SingularObservedBlock", "emission covariance not positive-definite");
  }
  const int p = static_cast<int>(mu_.n_elem);
  log_const_ = -0.5 * p * std::log(2.0 * M_PI) - arma::accu(arma::log(L_.diag()));
}

double MvnDensity::logpdf(const arma::vec& y) const {
  if (!y.is_finite()) throw_numeric("NonFiniteInput", "logpdf input has non-finite entries");
  const arma::vec u = arma::solve(arma::trimatl(L_), y - mu_);
  return log_const_ - 0.5 * arma::dot(u, u);
}

double logpdf(const arma::vec& y, const EmissionParams& params) {
  return MvnDensity(params).logpdf(y);
}

EmissionParams posterior_update(const NiwHyper& h, const arma::mat& Y, RngStream& rng) {
  const int n = static_cast<int>(Y.n_rows);
  if (n == 0) return sample_prior(h, rng);
  const arma::vec ybar = arma::mean(Y, 0).t();
  arma::mat S(h.p(), h.p(), arma::fill::zeros);
  for (int i = 0; i < n; ++i) {
    const arma::vec d = Y.row(i).t() - ybar;
    S += d * d.t();
  }
  const double lambda_n = h.lambda + n;
  const double nu_n = h.nu + n;
  const arma::vec mu_n = (h.lambda * h.mu0 + n * ybar) / lambda_n;
  const arma::vec dm = ybar - h.mu0;
  const arma::mat scale_n = h.scale + S + (h.lambda * n / lambda_n) * (dm * dm.t());

  EmissionParams out;
  out.sigma = sample_inverse_wishart(scale_n, nu_n, rng);
  out.mu = sample_mvn(mu_n, out.sigma / lambda_n, rng);
  return out;
}

ConditionalGaussian conditional_gaussian(const EmissionParams& params,
                                         const arma::uvec& obs_idx,
                                         const arma::vec& obs_vals) {
  const int p = static_cast<int>(params.mu.n_elem);
  if (obs_idx.n_elem == 0 || static_cast<int>(obs_idx.n_elem) >= p) {
    throw_logic("DimensionMismatch", "obs_idx must be a proper nonempty subset");
  }
  if (obs_idx.n_elem != obs_vals.n_elem) {
    throw_logic("DimensionMismatch", "obs_idx and obs_vals lengths differ");
  }
  std::vector<arma::uword> miss;
  {
    std::vector<bool> is_obs(p, false);
    for (arma::uword i : obs_idx) {
      if (i >= static_cast<arma::uword>(p)) {
        throw_logic("DimensionMismatch", "obs_idx out of range");
      }
      is_obs[i] = true;
    }
    for (int d = 0; d < p; ++d) {
      if (!is_obs[d]) miss.push_back(d);
    }
  }
  ConditionalGaussian out;
  out.miss_idx = arma::uvec(miss);

  const arma::mat S_oo = params.sigma.submat(obs_idx, obs_idx);
  const arma::mat S_mo = params.sigma.submat(out.miss_idx, obs_idx);
  arma::mat L;
  if (!arma::chol(L, S_oo, "lower")) {
    throw_numeric("SingularObservedBlock", "observed-coordinate covariance block singular");
  }
  // K = S_mo S_oo^{-1} via two triangular solves against the factor.
  const arma::mat W = arma::solve(arma::trimatl(L), S_mo.t());          // L W = S_om
  const arma::mat K = arma::solve(arma::trimatu(L.t()), W).t();        // S_mo S_oo^{-1}
  out.mean = params.mu(out.miss_idx) + K * (obs_vals - params.mu(obs_idx));
  arma::mat cov = params.sigma.submat(out.miss_idx, out.miss_idx) - W.t() * W;
  out.cov = 0.5 * (cov + cov.t());
  return out;
}

arma::vec sample_truncated_mvn(const arma::vec& mean, const arma::mat& cov,
                               const arma::vec& upper, RngStream& rng, int sweeps) {
  const int p = static_cast<int>(mean.n_elem);
  if (static_cast<int>(upper.n_elem) != p) {
    throw_logic("DimensionMismatch", "bound vector length mismatch");
  }
  bool any_truncated = false;
  for (int d = 0; d < p; ++d) any_truncated = any_truncated || std::isfinite(upper(d));
  if (!any_truncated) return sample_mvn(mean, cov, rng);
  if (p == 1) return arma::vec{rtnorm_upper(rng, mean(0), std::sqrt(cov(0, 0)), upper(0))};

  arma::mat Q;
  if (!arma::inv_sympd(Q, cov)) {
    throw_numeric("SingularObservedBlock", "truncated draw needs a positive-definite cov");
  }
  arma::vec x = mean;
  for (int d = 0; d < p; ++d) {
    if (std::isfinite(upper(d))) x(d) = upper(d) - 1e-6;
  }
  for (int s = 0; s < sweeps; ++s) {
    for (int d = 0; d < p; ++d) {
      // x_d | x_{-d} ~ N(mean_d - Q_dd^{-1} Q_{d,-d}(x_{-d} - mean_{-d}), Q_dd^{-1})
      double shift = 0.0;
      for (int j = 0; j < p; ++j) {
        if (j != d) shift += Q(d, j) * (x(j) - mean(j));
      }
      const double cmean = mean(d) - shift / Q(d, d);
      const double csd = std::sqrt(1.0 / Q(d, d));
      x(d) = std::isfinite(upper(d)) ? rtnorm_upper(rng, cmean, csd, upper(d))
                                     : rng.normal(cmean, csd);
    }
  }
  return x;
}

}  // namespace ihmm
