#include "ihmm/imputation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "ihmm/errors.hpp"

namespace ihmm {

arma::vec impute_time_point(const arma::vec& y, const arma::Row<std::uint8_t>& status,
                            const EmissionParams& params, const arma::vec& lod,
                            RngStream& rng, int trunc_sweeps) {
  const int p = static_cast<int>(y.n_elem);
  std::vector<arma::uword> obs_list;
  int n_missing = 0;
  for (int d = 0; d < p; ++d) {
    if (static_cast<ObsStatus>(status(d)) == ObsStatus::Observed) {
      obs_list.push_back(d);
    } else {
      ++n_missing;
    }
  }
  if (n_missing == 0) return y;

  arma::vec out = y;
  const double inf = std::numeric_limits<double>::infinity();

  if (obs_list.empty()) {
    arma::vec upper(p);
    for (int d = 0; d < p; ++d) {
      upper(d) = (static_cast<ObsStatus>(status(d)) == ObsStatus::BelowLOD) ? lod(d) : inf;
    }
    out = sample_truncated_mvn(params.mu, params.sigma, upper, rng, trunc_sweeps);
    return out;
  }

  const arma::uvec obs_idx(obs_list);
  const arma::vec obs_vals = y(obs_idx);
  const ConditionalGaussian g = conditional_gaussian(params, obs_idx, obs_vals);
  arma::vec upper(g.miss_idx.n_elem);
  for (arma::uword m = 0; m < g.miss_idx.n_elem; ++m) {
    const int d = static_cast<int>(g.miss_idx(m));
    upper(m) = (static_cast<ObsStatus>(status(d)) == ObsStatus::BelowLOD) ? lod(d) : inf;
  }
  const arma::vec draw = sample_truncated_mvn(g.mean, g.cov, upper, rng, trunc_sweeps);
  for (arma::uword m = 0; m < g.miss_idx.n_elem; ++m) out(g.miss_idx(m)) = draw(m);
  return out;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double prob) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = prob * (n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - lo;
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

CollectedImputations collect_imputations(const ImputationDraws& draws, int cap) {
  const int R = static_cast<int>(draws.values.size());
  if (R == 0) throw_numeric("NoPostBurninDraws", "no retained imputation draws");
  if (cap < 1) throw_config("NoPostBurninDraws", "retention cap must be positive");

  // Evenly spaced selection over the retained rows.
  std::vector<int> pick;
  const int m = std::min(cap, R);
  for (int r = 0; r < m; ++r) {
    pick.push_back(static_cast<int>((static_cast<long long>(r) * R) / m));
  }

  CollectedImputations out;
  out.records.reserve(m);
  for (int r = 0; r < m; ++r) {
    ImputationRecord rec;
    rec.draw_index = r + 1;
    rec.cells = draws.cells;
    rec.values = draws.values[pick[r]];
    out.records.push_back(std::move(rec));
  }

  const std::size_t C = draws.cells.size();
  out.summary.resize(C);
  std::vector<double> col(m);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (int r = 0; r < m; ++r) {
      col[r] = out.records[r].values[c];
      s += col[r];
    }
    std::sort(col.begin(), col.end());
    out.summary[c].cell = draws.cells[c];
    out.summary[c].mean = s / m;
    out.summary[c].lo = quantile_sorted(col, 0.025);
    out.summary[c].hi = quantile_sorted(col, 0.975);
  }
  return out;
}

void back_transform(CollectedImputations& coll, const AffineTransform& tr,
                    const arma::vec& lod_model_units) {
  arma::vec lod_orig(lod_model_units.n_elem);
  for (arma::uword d = 0; d < lod_model_units.n_elem; ++d) {
    lod_orig(d) = tr.to_orig(lod_model_units(d), static_cast<int>(d));
  }
  for (ImputationRecord& rec : coll.records) {
    for (std::size_t c = 0; c < rec.cells.size(); ++c) {
      const int d = rec.cells[c].dim;
      rec.values[c] = tr.to_orig(rec.values[c], d);
      if (rec.cells[c].status == ObsStatus::BelowLOD && !(rec.values[c] <= lod_orig(d))) {
        throw_numeric("NoFeasibleState", "back-transformed value exceeds the lod bound");
      }
    }
  }
  for (ImputationSummaryRow& row : coll.summary) {
    const int d = row.cell.dim;
    row.mean = tr.to_orig(row.mean, d);
    row.lo = tr.to_orig(row.lo, d);
    row.hi = tr.to_orig(row.hi, d);
  }
}

void write_imputation_summary(const std::vector<ImputationSummaryRow>& rows,
                              const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("FileOpen", "cannot write '" + path + "'");
  out << "subject_id,day_id,t,dim,status,posterior_mean,q2.5,q97.5\n";
  for (const ImputationSummaryRow& r : rows) {
    const Series& sr = ds.series[r.cell.series];
    out << sr.subject_id << ',' << sr.day_id << ',' << r.cell.t << ','
        << (r.cell.dim + 1) << ','
        << (r.cell.status == ObsStatus::MAR ? "mar" : "lod") << ','
        << fmt_double(r.mean) << ',' << fmt_double(r.lo) << ',' << fmt_double(r.hi)
        << "\n";
  }
}

}  // namespace ihmm
