#pragma once

#include <armadillo>
#include <string>
#include <vector>

#include "ihmm/data.hpp"
#include "ihmm/emissions.hpp"
#include "ihmm/rng.hpp"

namespace ihmm {

// One draw of the unobserved cells at a single time point, conditional on the
// hidden state's emission parameters.  Observed coordinates pass through;
// MAR coordinates are unconstrained; BelowLOD coordinates are truncated above
// at their detection limit.  Mixed patterns condition on the observed block
// first and then draw the rest jointly.
arma::vec impute_time_point(const arma::vec& y, const arma::Row<std::uint8_t>& status,
                            const EmissionParams& params, const arma::vec& lod,
                            RngStream& rng, int trunc_sweeps = 10);

struct CellKey {
  int series;
  int t;
  int dim;
  ObsStatus status;
};

// Column-compressed imputation draws: one fixed cell order, one value row per
// retained iteration.
struct ImputationDraws {
  std::vector<CellKey> cells;
  std::vector<int> iterations;              // source sweep of each row
  std::vector<std::vector<double>> values;  // values[r][c] pairs with cells[c]
};

struct ImputationRecord {
  int draw_index;                 // 1..m after reindexing
  std::vector<CellKey> cells;     // shared cell order
  std::vector<double> values;
};

struct ImputationSummaryRow {
  CellKey cell;
  double mean;
  double lo;   // equal-tailed 2.5%
  double hi;   // equal-tailed 97.5%
};

struct CollectedImputations {
  std::vector<ImputationRecord> records;
  std::vector<ImputationSummaryRow> summary;
};

// Selects at most `cap` evenly spaced draws, reindexes them 1..m, and computes
// per-cell posterior means with central 95% intervals.
CollectedImputations collect_imputations(const ImputationDraws& draws, int cap);

// Maps records back to original measurement units and re-checks every
// BelowLOD cell against the original-unit bound.
void back_transform(CollectedImputations& coll, const AffineTransform& tr,
                    const arma::vec& lod_model_units);

void write_imputation_summary(const std::vector<ImputationSummaryRow>& rows,
                              const Dataset& ds, const std::string& path);

}  // namespace ihmm
