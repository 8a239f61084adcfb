#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <armadillo>

#include "ihmm/data.hpp"
#include "ihmm/emissions.hpp"
#include "ihmm/imputation.hpp"
#include "ihmm/transitions.hpp"

namespace ihmm {

enum class EmissionUpdate { Conjugate, MhDecomposition };

struct McmcConfig {
  int n_iter = 10000;
  int burn_in = 5000;
  int thin = 1;
  std::uint64_t seed = 1;
  int workers = 1;
  int imputation_draws_retained = 400;
  int initial_K = 10;
  bool subject_effects = false;  // activate per-subject transition deviations

  // Start from pooled k-means assignments with conjugately refreshed emission
  // parameters instead of a prior draw.  The stationary law is unchanged; this
  // only moves the chain's starting point onto the data, which matters most
  // for the collapsed mixture whose independent state moves merge slowly.
  bool init_kmeans = false;

  // max_states > 0 caps the model at that many sticks, making the last one
  // absorb the leftover mass (finite truncation).  No growth, no deletion.
  // Used by exactness tests; 0 means the full unbounded model.
  int max_states = 0;
  int trunc_sweeps = 10;
  EmissionUpdate emission_update = EmissionUpdate::Conjugate;
  double mh_step = 0.1;
  bool collapse_transitions = false;  // shared stick row: mixture instead of HMM
  bool record_states = true;
  int checkpoint_interval = 0;        // sweeps between checkpoints, 0 = none
  std::string checkpoint_path;

  void validate() const;
};

struct ChainState {
  int iteration = 0;
  std::uint64_t seed = 0;
  PsbpParams psbp;
  std::vector<EmissionParams> emissions;   // length psbp.K
  std::vector<arma::ivec> z;               // per series, length T
  std::vector<arma::vec> u;                // slice variables, per series
  std::vector<arma::mat> values;           // working copies: data + imputations

  int K() const { return psbp.K; }
  int occupied_states() const;
};

struct PosteriorDraws {
  std::vector<int> iterations;
  std::vector<int> k_occupied;
  std::vector<int> k_instantiated;
  std::vector<double> loglik;
  std::vector<std::vector<std::vector<int>>> z;            // [rec][series][t]
  std::vector<std::vector<EmissionParams>> emission_draws; // [rec][state]
  ImputationDraws imputations;
  std::uint64_t transition_ops = 0;  // forward-backward inner-loop operations
  int n_series = 0;

  int n_records() const { return static_cast<int>(iterations.size()); }
};

// Transition probability from j_prev (-1 = series start) to state k for one
// subject at one design point.  max_states > 0 applies the truncated-model
// semantics: the last state absorbs all mass past the earlier sticks.
double transition_probability(const PsbpParams& params, int j_prev, int k, int subject,
                              const arma::vec& x, int max_states = 0);

ChainState init_chain(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior);

// Phase 1 of a sweep: slice variables below the realized transition sticks,
// then state instantiation until every tail is beneath its series' smallest
// slice.  Exposed for the exactness tests.
void sample_slices(ChainState& chain, const Dataset& ds, const McmcConfig& cfg,
                   const NiwHyper& prior);

// Phase 2 kernel for one series: forward filtering over the slice-truncated
// support and exact backward draw.  ops, when given, accumulates the inner
// transition-loop count.
arma::ivec sample_trajectory(int series, const ChainState& chain, const Dataset& ds,
                             const McmcConfig& cfg, RngStream& rng,
                             std::uint64_t* ops = nullptr);

void sweep(ChainState& chain, const Dataset& ds, const McmcConfig& cfg,
           const NiwHyper& prior, PosteriorDraws* draws = nullptr);

PosteriorDraws run(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior);

// Continues a checkpointed run to cfg.n_iter sweeps.
PosteriorDraws resume(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior,
                      const std::string& checkpoint_path);

void write_checkpoint(const ChainState& chain, const PosteriorDraws& draws,
                      const std::string& path);
void read_checkpoint(ChainState& chain, PosteriorDraws& draws, const std::string& path);

// Rewrites the four draw-log CSVs (states, imputations, params, scalars)
// from the accumulated draws; deterministic bytes for a given seed.
void write_draw_logs(const PosteriorDraws& draws, const Dataset& ds,
                     const std::string& out_dir, bool include_states = true);

// Rebuilds draws from the CSV logs.  scalars.csv is required; the other
// files are picked up when present.  The log schema carries no cell status,
// so reconstructed imputation cells are matched against a truth list by
// coordinates alone.
PosteriorDraws read_draw_logs(const std::string& out_dir);

// Complete-data emission log density at the chain's current values.
double chain_loglik(const ChainState& chain);

}  // namespace ihmm
