#include "ihmm/baselines.hpp"

#include <algorithm>
#include <map>

#include "ihmm/errors.hpp"
#include "ihmm/imputation.hpp"
#include "ihmm/rng.hpp"

namespace ihmm {

namespace {

// Comparison models carry no stick covariates; the chain reads q from the
// series, so the copies drop their design columns.
Dataset strip_covariates(const Dataset& ds) {
  Dataset flat = ds;
  for (Series& sr : flat.series) sr.covariates.set_size(sr.T(), 0);
  return flat;
}

}  // namespace

std::vector<std::string> strata_labels(const Dataset& ds) {
  std::map<std::string, int> seen;
  for (const Series& sr : ds.series) {
    if (sr.microenv.size() != static_cast<std::size_t>(sr.T()))
      throw_config("NoLabels", "series " + sr.subject_id + "/" + sr.day_id +
                                   " carries no microenvironment labels");
    for (const std::string& e : sr.microenv) seen.emplace(e, 0);
  }
  std::vector<std::string> out;
  for (const auto& kv : seen) out.push_back(kv.first);
  return out;
}

PosteriorDraws fit_pooled(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior) {
  McmcConfig c = cfg;
  c.max_states = 1;
  c.initial_K = 1;
  c.subject_effects = false;
  c.collapse_transitions = false;
  return run(strip_covariates(ds), c, prior);
}

PosteriorDraws fit_dpmm(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior) {
  McmcConfig c = cfg;
  c.collapse_transitions = true;
  c.subject_effects = false;
  return run(strip_covariates(ds), c, prior);
}

PosteriorDraws fit_stratified(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior) {
  cfg.validate();
  prior.validate();
  if (ds.series.empty()) throw_config("EmptyDataset", "no series to fit");
  if (ds.p() != prior.p())
    throw_config("DimensionMismatch", "dataset has " + std::to_string(ds.p()) +
                                          " dimensions, prior has " + std::to_string(prior.p()));

  const std::vector<std::string> labels = strata_labels(ds);
  const int L = static_cast<int>(labels.size());
  const int n = static_cast<int>(ds.series.size());

  std::map<std::string, int> label_idx;
  for (int l = 0; l < L; ++l) label_idx[labels[l]] = l;
  std::vector<arma::ivec> lab(n);
  std::vector<int> rows_per_label(L, 0);
  for (int s = 0; s < n; ++s) {
    const Series& sr = ds.series[s];
    lab[s].set_size(sr.T());
    for (int t = 0; t < sr.T(); ++t) {
      lab[s][t] = label_idx.at(sr.microenv[t]);
      ++rows_per_label[lab[s][t]];
    }
  }

  std::vector<EmissionParams> params(L);
  for (int l = 0; l < L; ++l) {
    RngStream rs = RngStream::derive(cfg.seed, 0, StreamTag::kInit, l);
    params[l] = sample_prior(prior, rs);
  }
  std::vector<arma::mat> values;
  for (const Series& sr : ds.series) values.push_back(sr.values);

  PosteriorDraws draws;
  draws.n_series = n;
  for (int s = 0; s < n; ++s) {
    const Series& sr = ds.series[s];
    for (int t = 0; t < sr.T(); ++t)
      for (int d = 0; d < ds.p(); ++d)
        if (sr.stat(t, d) != ObsStatus::Observed)
          draws.imputations.cells.push_back(CellKey{s, t, d, sr.stat(t, d)});
  }

  const int R_total = (cfg.n_iter - cfg.burn_in) / cfg.thin;
  const int m = std::min(R_total, cfg.imputation_draws_retained);

  for (int it = 1; it <= cfg.n_iter; ++it) {
    // Missing cells from each label's current posterior predictive.
    for (int s = 0; s < n; ++s) {
      const Series& sr = ds.series[s];
      RngStream rs = RngStream::derive(cfg.seed, it, StreamTag::kImpute, s);
      for (int t = 0; t < sr.T(); ++t) {
        bool missing = false;
        for (int d = 0; d < ds.p() && !missing; ++d)
          missing = sr.stat(t, d) != ObsStatus::Observed;
        if (!missing) continue;
        const arma::vec y = values[s].row(t).t();
        const arma::vec yn = impute_time_point(y, sr.status.row(t), params[lab[s][t]], ds.lod,
                                               rs, cfg.trunc_sweeps);
        values[s].row(t) = yn.t();
      }
    }

    // Conjugate refresh per label over its completed rows.
    for (int l = 0; l < L; ++l) {
      arma::mat Y(rows_per_label[l], ds.p());
      int r = 0;
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < ds.series[s].T(); ++t)
          if (lab[s][t] == l) Y.row(r++) = values[s].row(t);
      RngStream rs = RngStream::derive(cfg.seed, it, StreamTag::kEmit, l);
      params[l] = posterior_update(prior, Y, rs);
    }

    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      const int r = draws.n_records();
      draws.iterations.push_back(it);
      draws.k_occupied.push_back(L);
      draws.k_instantiated.push_back(L);

      std::vector<MvnDensity> dens;
      dens.reserve(L);
      for (int l = 0; l < L; ++l) dens.emplace_back(params[l]);
      double ll = 0.0;
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < ds.series[s].T(); ++t)
          ll += dens[lab[s][t]].logpdf(values[s].row(t).t());
      draws.loglik.push_back(ll);

      if (cfg.record_states) {
        std::vector<std::vector<int>> zz(n);
        for (int s = 0; s < n; ++s) zz[s].assign(lab[s].begin(), lab[s].end());
        draws.z.push_back(std::move(zz));
      }
      draws.emission_draws.push_back(params);

      if (!draws.imputations.cells.empty() && R_total > 0) {
        const std::int64_t lo = static_cast<std::int64_t>(r) * m / R_total;
        const std::int64_t hi = static_cast<std::int64_t>(r + 1) * m / R_total;
        if (hi > lo) {
          draws.imputations.iterations.push_back(it);
          std::vector<double> row;
          row.reserve(draws.imputations.cells.size());
          for (const CellKey& c : draws.imputations.cells)
            row.push_back(values[c.series](c.t, c.dim));
          draws.imputations.values.push_back(std::move(row));
        }
      }
    }
  }
  return draws;
}

PosteriorDraws fit_baseline(BaselineKind kind, const Dataset& ds, const McmcConfig& cfg,
                            const NiwHyper& prior) {
  switch (kind) {
    case BaselineKind::Pooled:
      return fit_pooled(ds, cfg, prior);
    case BaselineKind::Stratified:
      return fit_stratified(ds, cfg, prior);
    case BaselineKind::Dpmm:
      return fit_dpmm(ds, cfg, prior);
  }
  throw_logic("BadBaselineKind", "unreachable");
}

}  // namespace ihmm
