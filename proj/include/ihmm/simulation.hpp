#pragma once

#include <string>
#include <utility>
#include <vector>

#include <armadillo>

#include "ihmm/data.hpp"
#include "ihmm/rng.hpp"

namespace ihmm {

enum class Scenario { Shared, Distinct };

struct SimConfig {
  int n_series = 20;
  int T = 288;
  int p = 3;
  int K_true = 20;
  Scenario scenario = Scenario::Shared;
  double missing_level = 0.0;  // split evenly between MAR and below-LOD
  std::uint64_t seed = 1;

  void validate() const;
};

struct RemovedCell {
  int series;
  int t;
  int dim;
  double true_value;
  ObsStatus mechanism;  // MAR or BelowLOD
};

struct SimTruth {
  std::vector<arma::ivec> z_true;      // per series, global state labels
  std::vector<arma::vec> mu_true;      // per state, standardized units
  std::vector<arma::mat> sigma_true;
  std::vector<RemovedCell> removed_cells;
};

// Synthetic data: declining-weight state frequencies per series, contiguous
// blocks in a shared or per-series order rotated to start mid-block, Gaussian
// emissions, each dimension standardized; missingness injected at the
// configured level.
std::pair<Dataset, SimTruth> generate(const SimConfig& cfg);

// Marks the lowest level/2 quantile of every dimension as below the detection
// limit and removes chunks of 1..10 time points at random until level/2 of
// the cells are MAR.  True values move into truth.removed_cells.
void inject_missing(Dataset& ds, SimTruth& truth, double level, RngStream& rng);

void write_truth(const SimTruth& truth, const std::string& path);
void write_removed(const SimTruth& truth, const std::string& path);
void write_truth_params(const SimTruth& truth, const std::string& path);

// Rebuilds the truth from a simulate output directory: truth.csv plus, when
// present, truth_params.csv and removed.csv.
SimTruth read_truth(const std::string& dir);

}  // namespace ihmm
