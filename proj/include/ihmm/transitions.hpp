#pragma once

#include <armadillo>
#include <vector>

#include "ihmm/rng.hpp"

namespace ihmm {

// Covariate-dependent probit stick-breaking transition model.  Row j of alpha
// holds the stick intercepts used when the previous state is j; alpha_init is
// the extra row driving the first time point of every series, with entries
// treated like off-diagonal intercepts under the shared hyperpriors.  With
// shared_row set, every previous state maps to alpha_init (temporal dependence
// collapses and the model becomes a stick-breaking mixture).
struct PsbpParams {
  int K = 0;
  int q = 0;
  int n_subjects = 0;
  bool subject_effects = false;  // gamma terms active
  bool shared_row = false;       // mixture collapse: one stick row for all j

  arma::mat alpha;       // K x K (empty when shared_row)
  arma::vec alpha_init;  // length K
  arma::mat beta;        // K x q, row k = beta_k
  arma::cube gamma;      // K x q x n_subjects, slice i row k = gamma_ik

  double sigma2_alpha = 1.0;  // off-diagonal intercept variance
  double m_alpha = 0.0;       // self-transition intercept mean
  double v_alpha = 1.0;       // self-transition intercept variance
  double kappa2 = 1.0;        // subject-effect variance

  // Draws hyperparameters from their priors, then instantiates K0 states.
  static PsbpParams init_prior(int K0, int q, int n_subjects, bool subject_effects,
                               bool shared_row, RngStream& rng);

  // Linear predictor eta_jk(x) for subject i; j = -1 selects the initial row.
  double eta(int j, int k, int i, const arma::vec& x) const;

  // Phi(eta) for all rows at one design point: (K+1) x K, row 0 = initial row,
  // row j+1 = previous state j.  The sampler's per-time-point kernel.
  arma::mat phi_matrix(int i, const arma::vec& x) const;
};

// pi_jk(x) = Phi(eta_jk) prod_{l<k} (1 - Phi(eta_jl)).
double stick_probability(const PsbpParams& params, int j, int k, int i, const arma::vec& x);

// prod_{l<K_used} (1 - Phi(eta_jl)): probability mass beyond the first K_used sticks.
double tail_mass(const PsbpParams& params, int j, int i, const arma::vec& x, int K_used);

// One realized transition: previous state j_prev (-1 for the start of a
// series), arrived-at state k_cur, subject and design point it occurred at.
struct TransitionObs {
  int subject;
  int j_prev;
  int k_cur;
  const arma::vec* x;
};

// Probit data augmentation: latent truncated normals per (transition, stick),
// Gaussian full conditionals for alpha rows, beta, gamma, then the variance
// hyperparameters.  Single-threaded; consumes rng in a fixed order.
// absorbing_k >= 0 marks the final stick of a truncated model: transitions
// into it hold the leftover mass, so they contribute failure indicators for
// the sticks below it and no success draw of their own.
void augment_and_update(PsbpParams& params, const std::vector<TransitionObs>& obs,
                        RngStream& rng, int absorbing_k = -1);

// Appends stick K+1 with all parameters drawn from their priors.
void instantiate_state(PsbpParams& params, RngStream& rng);

// Drops sticks new_K..K-1.  Only valid for trailing states that no realized
// transition reaches; their parameters are prior draws given the hypers, so
// removal leaves the posterior invariant.
void remove_trailing_states(PsbpParams& params, int new_K);

}  // namespace ihmm
