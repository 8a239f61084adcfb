#pragma once

#include <armadillo>

#include "ihmm/rng.hpp"

namespace ihmm {

// Normal-Inverse-Wishart prior: Sigma ~ IW(nu, scale), mu | Sigma ~ N(mu0, Sigma/lambda).
struct NiwHyper {
  arma::vec mu0;
  double lambda = 10.0;
  double nu = 0.0;     // must exceed p-1
  arma::mat scale;

  static NiwHyper defaults(int p);  // mu0=0, lambda=10, nu=p+2, scale=I
  void validate() const;
  int p() const { return static_cast<int>(mu0.n_elem); }
};

struct EmissionParams {
  arma::vec mu;
  arma::mat sigma;
};

// Precomputed Cholesky form for repeated density evaluation of one state.
class MvnDensity {
public:
  explicit MvnDensity(const EmissionParams& params);
  double logpdf(const arma::vec& y) const;

private:
  arma::vec mu_;
  arma::mat L_;        // lower Cholesky factor of sigma
  double log_const_;   // -(p/2) log(2 pi) - sum(log diag L)
};

EmissionParams sample_prior(const NiwHyper& h, RngStream& rng);

double logpdf(const arma::vec& y, const EmissionParams& params);

// Draw from the full conditional given the rows of Y assigned to one state.
// Empty Y reduces exactly to sample_prior.
EmissionParams posterior_update(const NiwHyper& h, const arma::mat& Y, RngStream& rng);

// Law of the unobserved coordinates given params and the observed ones.
struct ConditionalGaussian {
  arma::uvec miss_idx;  // ascending complement of obs_idx
  arma::vec mean;
  arma::mat cov;
};
ConditionalGaussian conditional_gaussian(const EmissionParams& params,
                                         const arma::uvec& obs_idx,
                                         const arma::vec& obs_vals);

// MVN(mean, cov) restricted to {x_d <= upper_d}; +inf marks an untruncated
// coordinate.  Coordinate Gibbs with truncated coordinates started at
// bound - 1e-6; the fully unbounded case short-circuits to an exact draw.
arma::vec sample_truncated_mvn(const arma::vec& mean, const arma::mat& cov,
                               const arma::vec& upper, RngStream& rng, int sweeps = 10);

}  // namespace ihmm
