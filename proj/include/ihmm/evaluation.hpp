#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <armadillo>

#include "ihmm/data.hpp"
#include "ihmm/imputation.hpp"
#include "ihmm/sampler.hpp"
#include "ihmm/simulation.hpp"

namespace ihmm {

struct MetricReport {
  double k_hat = std::numeric_limits<double>::quiet_NaN();
  double hamming = std::numeric_limits<double>::quiet_NaN();
  double mu_mse = std::numeric_limits<double>::quiet_NaN();
  double mar_mse = std::numeric_limits<double>::quiet_NaN();
  double mar_bias = std::numeric_limits<double>::quiet_NaN();
  double lod_mse = std::numeric_limits<double>::quiet_NaN();
  double lod_bias = std::numeric_limits<double>::quiet_NaN();
};

// Mean over retained draws of the number of distinct occupied states.
double k_hat(const PosteriorDraws& draws);

// Flatten per-series label vectors into one pooled vector.
std::vector<int> pool_labels(const std::vector<std::vector<int>>& z);
std::vector<int> pool_labels(const std::vector<arma::ivec>& z);

// Misclassification rate after the overlap-maximizing injective relabeling
// (rectangular optimal assignment on the contingency table).
double hamming_distance(const std::vector<int>& est, const std::vector<int>& tru);

// Max-overlap assignment: position k holds the true label matched to
// estimated label k, or -1.  Labels are dense 0-based on both sides.
std::vector<int> overlap_assignment(const std::vector<int>& est, const std::vector<int>& tru,
                                    int n_est, int n_tru);

// Per retained draw: relabel by the overlap-maximizing assignment, then
// average squared estimation error of the state means over dimensions and
// occupied true states; unmatched true states contribute their squared norm
// over dimensions.  Averaged over draws.
double mu_mse(const PosteriorDraws& draws, const SimTruth& truth);

struct ImpError {
  double mse = 0.0;
  double bias = 0.0;
};

// Imputation accuracy against the held-out truth for one mechanism.
ImpError imputation_error(const std::vector<ImputationRecord>& records,
                          const std::vector<RemovedCell>& removed, ObsStatus mechanism);
ImpError imputation_error(const ImputationDraws& draws, const std::vector<RemovedCell>& removed,
                          ObsStatus mechanism);

// Variation of information between two pooled partitions, natural logs.
double variation_of_information(const std::vector<int>& a, const std::vector<int>& b);

struct PointPartition {
  int record_index = -1;                // into draws
  double avg_vi = 0.0;                  // mean VI to the other candidates
  std::vector<std::vector<int>> z;      // per series
};

// Draw minimizing average pairwise variation of information among retained
// (optionally evenly subsampled) draws.
PointPartition point_estimate_partition(const PosteriorDraws& draws, int subsample = 0);

struct Crosstab {
  std::vector<std::string> env_labels;  // sorted distinct labels
  arma::imat counts;                    // (n_states) x (n_envs)
};

Crosstab microenv_crosstab(const std::vector<std::vector<int>>& z, const Dataset& ds);

// Aggregation across per-series independent fits: states add up, the
// misclassification rate averages.
double aggregate_k_hat(const std::vector<double>& per_series);
double aggregate_hamming(const std::vector<double>& per_series);

void write_metrics(const MetricReport& report, const std::string& path);
void write_metrics(const std::vector<MetricReport>& replicates, const std::string& path);
void write_crosstab(const Crosstab& tab, const std::string& path);
void write_point_partition(const PointPartition& pp, const std::string& path);

}  // namespace ihmm
