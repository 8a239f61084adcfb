#include "ihmm/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include "ihmm/errors.hpp"

namespace ihmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Runs fn(0..n-1) on up to `workers` threads.  Each index owns its own RNG
// stream and writes disjoint state, so the schedule cannot affect results.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  const int w = std::min(workers, n);
  if (w <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// Stick probabilities for every previous-state row at one design point:
// (K+1) x K, row 0 = series start.  Under truncation the last column holds
// the leftover mass instead of its own stick.
arma::mat stick_matrix_at(const PsbpParams& params, int i, const arma::vec& x,
                          bool capped) {
  const arma::mat phi = params.phi_matrix(i, x);
  const int R = static_cast<int>(phi.n_rows);
  const int K = static_cast<int>(phi.n_cols);
  arma::mat out(R, K);
  for (int r = 0; r < R; ++r) {
    double c = 1.0;
    for (int k = 0; k < K; ++k) {
      out(r, k) = (capped && k == K - 1) ? c : phi(r, k) * c;
      c *= 1.0 - phi(r, k);
    }
  }
  return out;
}

// Leftover mass past all instantiated sticks, per previous-state row.
arma::vec tails_at(const PsbpParams& params, int i, const arma::vec& x) {
  const arma::mat phi = params.phi_matrix(i, x);
  arma::vec out(phi.n_rows);
  for (arma::uword r = 0; r < phi.n_rows; ++r) {
    double c = 1.0;
    for (arma::uword k = 0; k < phi.n_cols; ++k) c *= 1.0 - phi(r, k);
    out(r) = c;
  }
  return out;
}

arma::vec design_point(const Series& sr, int t) {
  if (sr.covariates.n_cols == 0) return arma::vec();
  return sr.covariates.row(t).t();
}

// Pooled k-means labels for a data-informed start: k-means++ seeding over the
// fully observed rows, a fixed number of Lloyd iterations, then every row
// assigned by mean squared distance over its observed coordinates.  Rows with
// nothing observed land in state 0.  Deterministic given the stream.
std::vector<arma::ivec> kmeans_labels(const Dataset& ds, int K0, RngStream& rng) {
  const int n = static_cast<int>(ds.series.size());
  const int p = ds.p();
  std::vector<arma::ivec> labels(n);
  for (int s = 0; s < n; ++s) labels[s] = arma::ivec(ds.series[s].T(), arma::fill::zeros);

  arma::mat full(0, p);
  for (int s = 0; s < n; ++s) {
    const Series& sr = ds.series[s];
    for (int t = 0; t < sr.T(); ++t) {
      bool complete = true;
      for (int d = 0; d < p && complete; ++d) complete = sr.stat(t, d) == ObsStatus::Observed;
      if (complete) full.insert_rows(full.n_rows, sr.values.row(t));
    }
  }
  if (full.n_rows == 0) return labels;
  const arma::uword m = full.n_rows;

  // Seeding: uniform first centroid, then squared-distance weighted picks.
  arma::mat cent(K0, p);
  cent.row(0) = full.row(static_cast<arma::uword>(rng.u01() * m) % m);
  arma::vec d2(m, arma::fill::value(kInf));
  for (int k = 1; k < K0; ++k) {
    for (arma::uword r = 0; r < m; ++r) {
      const double d = arma::accu(arma::square(full.row(r) - cent.row(k - 1)));
      d2(r) = std::min(d2(r), d);
    }
    const double total = arma::accu(d2);
    if (total <= 0.0) {
      cent.row(k) = full.row(static_cast<arma::uword>(k) % m);
      continue;
    }
    double target = rng.u01() * total;
    arma::uword pick = m - 1;
    for (arma::uword r = 0; r < m; ++r) {
      target -= d2(r);
      if (target <= 0.0) {
        pick = r;
        break;
      }
    }
    cent.row(k) = full.row(pick);
  }

  arma::uvec assign(m, arma::fill::zeros);
  for (int iter = 0; iter < 10; ++iter) {
    arma::vec best(m);
    for (arma::uword r = 0; r < m; ++r) {
      int bk = 0;
      double bd = kInf;
      for (int k = 0; k < K0; ++k) {
        const double d = arma::accu(arma::square(full.row(r) - cent.row(k)));
        if (d < bd) {
          bd = d;
          bk = k;
        }
      }
      assign(r) = bk;
      best(r) = bd;
    }
    // Re-seed empty clusters at the worst-fit rows, one each.
    for (int k = 0; k < K0; ++k) {
      if (arma::any(assign == static_cast<arma::uword>(k))) continue;
      const arma::uword worst = best.index_max();
      assign(worst) = k;
      best(worst) = 0.0;
    }
    for (int k = 0; k < K0; ++k) {
      const arma::uvec members = arma::find(assign == static_cast<arma::uword>(k));
      if (!members.is_empty()) cent.row(k) = arma::mean(full.rows(members), 0);
    }
  }

  for (int s = 0; s < n; ++s) {
    const Series& sr = ds.series[s];
    for (int t = 0; t < sr.T(); ++t) {
      std::vector<arma::uword> obs;
      for (int d = 0; d < p; ++d) {
        if (sr.stat(t, d) == ObsStatus::Observed) obs.push_back(d);
      }
      if (obs.empty()) continue;
      int bk = 0;
      double bd = kInf;
      for (int k = 0; k < K0; ++k) {
        double d = 0.0;
        for (arma::uword di : obs) {
          const double gap = sr.values(t, di) - cent(k, di);
          d += gap * gap;
        }
        d /= static_cast<double>(obs.size());
        if (d < bd) {
          bd = d;
          bk = k;
        }
      }
      labels[s](t) = bk;
    }
  }
  return labels;
}

// Draws the unobserved cells of one row given emission params, conditioning
// on the observed block; below-limit cells are then pinned at bound - 0.5.
// Used only for chain initialization.
void init_missing_row(arma::mat& values, const Series& sr, int t,
                      const EmissionParams& par, const arma::vec& lod,
                      RngStream& rng) {
  const int p = static_cast<int>(values.n_cols);
  std::vector<arma::uword> obs;
  for (int d = 0; d < p; ++d) {
    if (sr.stat(t, d) == ObsStatus::Observed) obs.push_back(d);
  }
  if (static_cast<int>(obs.size()) == p) return;

  if (obs.empty()) {
    const arma::vec upper(p, arma::fill::value(kInf));
    const arma::vec draw = sample_truncated_mvn(par.mu, par.sigma, upper, rng, 1);
    values.row(t) = draw.t();
  } else {
    const arma::uvec obs_idx(obs);
    arma::vec obs_vals(obs.size());
    for (arma::uword j = 0; j < obs_idx.n_elem; ++j) {
      obs_vals(j) = values(t, obs_idx(j));
    }
    const ConditionalGaussian cg = conditional_gaussian(par, obs_idx, obs_vals);
    const arma::vec upper(cg.miss_idx.n_elem, arma::fill::value(kInf));
    const arma::vec draw = sample_truncated_mvn(cg.mean, cg.cov, upper, rng, 1);
    for (arma::uword j = 0; j < cg.miss_idx.n_elem; ++j) {
      values(t, cg.miss_idx(j)) = draw(j);
    }
  }
  for (int d = 0; d < p; ++d) {
    if (sr.stat(t, d) == ObsStatus::BelowLOD) values(t, d) = lod(d) - 0.5;
  }
}

// Metropolis update of one state's covariance through its unit-lower-
// triangular / diagonal decomposition, followed by the exact Gaussian draw of
// the mean.  Matches the conjugate update's stationary law; kept as an
// optional strategy for comparison runs.
EmissionParams mh_decomposition_update(const NiwHyper& h, const arma::mat& Y,
                                       const EmissionParams& current, double step,
                                       RngStream& rng) {
  const int p = h.p();
  const int n = static_cast<int>(Y.n_rows);
  const arma::vec ybar = arma::mean(Y, 0).t();
  arma::mat S(p, p, arma::fill::zeros);
  for (int r = 0; r < n; ++r) {
    const arma::vec d = Y.row(r).t() - ybar;
    S += d * d.t();
  }

  const arma::vec mu = current.mu;
  const arma::vec dm = ybar - mu;
  const arma::vec dp = mu - h.mu0;
  // Sum of squares around the current mean plus the prior pseudo-observation.
  const arma::mat S_total =
      h.scale + S + n * (dm * dm.t()) + h.lambda * (dp * dp.t());

  arma::mat C = arma::chol(current.sigma, "lower");
  arma::vec logd(p);
  arma::mat L = C;
  for (int j = 0; j < p; ++j) {
    const double c = C(j, j);
    logd(j) = 2.0 * std::log(c);
    L.col(j) /= c;
  }

  // Log posterior density of (L, log d) up to a constant: inverse-Wishart and
  // Gaussian terms in Sigma plus the volume factor of the decomposition.
  auto log_target = [&](const arma::mat& Lc, const arma::vec& ldc) {
    const arma::mat A = arma::solve(arma::trimatl(Lc), S_total);
    const arma::mat B = arma::solve(arma::trimatl(Lc), A.t());
    double tr = 0.0;
    for (int j = 0; j < p; ++j) tr += B(j, j) * std::exp(-ldc(j));
    double val = -0.5 * (h.nu + p + 1 + n + 1) * arma::accu(ldc) - 0.5 * tr;
    for (int j = 0; j < p; ++j) val += (p - j) * ldc(j);
    return val;
  };

  double cur = log_target(L, logd);
  for (int j = 0; j < p; ++j) {
    arma::vec prop = logd;
    prop(j) += step * rng.normal();
    const double cand = log_target(L, prop);
    if (std::log(rng.u01()) < cand - cur) {
      logd = prop;
      cur = cand;
    }
  }
  for (int r = 1; r < p; ++r) {
    for (int c = 0; c < r; ++c) {
      arma::mat prop = L;
      prop(r, c) += step * rng.normal();
      const double cand = log_target(prop, logd);
      if (std::log(rng.u01()) < cand - cur) {
        L = prop;
        cur = cand;
      }
    }
  }

  EmissionParams out;
  out.sigma = L * arma::diagmat(arma::exp(logd)) * L.t();
  out.sigma = 0.5 * (out.sigma + out.sigma.t());

  // mu | Sigma, Y is exactly Gaussian.
  const double lam_n = h.lambda + n;
  const arma::vec mu_n = (h.lambda * h.mu0 + n * ybar) / lam_n;
  const arma::mat Lc = arma::chol(out.sigma / lam_n, "lower");
  arma::vec z(p);
  for (int j = 0; j < p; ++j) z(j) = rng.normal();
  out.mu = mu_n + Lc * z;
  return out;
}

}  // namespace

void McmcConfig::validate() const {
  if (n_iter < 1) throw_config("BadIterationCount", "n_iter must be positive");
  if (burn_in < 0 || burn_in >= n_iter) {
    throw_config("BadBurnIn", "burn_in must lie in [0, n_iter)");
  }
  if (thin < 1) throw_config("BadThinning", "thin must be at least 1");
  if (workers < 1) throw_config("BadWorkerCount", "workers must be at least 1");
  if (imputation_draws_retained < 1) {
    throw_config("BadRetentionCap", "imputation_draws_retained must be positive");
  }
  if (initial_K < 1) throw_config("BadInitialStates", "initial_K must be positive");
  if (max_states < 0) throw_config("BadStateCap", "max_states must be nonnegative");
  if (trunc_sweeps < 1) throw_config("BadGibbsSweeps", "trunc_sweeps must be positive");
  if (mh_step <= 0.0) throw_config("BadStepSize", "mh_step must be positive");
  if (checkpoint_interval < 0) {
    throw_config("BadCheckpointInterval", "checkpoint_interval must be nonnegative");
  }
  if (checkpoint_interval > 0 && checkpoint_path.empty()) {
    throw_config("MissingCheckpointPath", "checkpointing requires a path");
  }
}

int ChainState::occupied_states() const {
  std::vector<char> seen(psbp.K, 0);
  for (const arma::ivec& zs : z) {
    for (arma::uword t = 0; t < zs.n_elem; ++t) seen[zs(t)] = 1;
  }
  int c = 0;
  for (char s : seen) c += s;
  return c;
}

double transition_probability(const PsbpParams& params, int j_prev, int k, int subject,
                              const arma::vec& x, int max_states) {
  if (max_states > 0 && k == max_states - 1) {
    return tail_mass(params, j_prev, subject, x, max_states - 1);
  }
  return stick_probability(params, j_prev, k, subject, x);
}

ChainState init_chain(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior) {
  cfg.validate();
  prior.validate();
  if (ds.series.empty()) throw_config("EmptyDataset", "no series to fit");
  for (const Series& sr : ds.series) {
    if (sr.T() == 0) throw_config("EmptyDataset", "series with no time points");
  }
  if (prior.p() != ds.p()) {
    throw_config("DimensionMismatch", "emission prior dimension does not match data");
  }

  const bool capped = cfg.max_states > 0;
  const int n = static_cast<int>(ds.series.size());

  ChainState ch;
  ch.seed = cfg.seed;
  ch.iteration = 0;

  RngStream pr = RngStream::derive(cfg.seed, 0, static_cast<std::uint64_t>(StreamTag::kInit), 0);
  const int K0 = capped ? cfg.max_states : cfg.initial_K;
  ch.psbp = PsbpParams::init_prior(K0, ds.q(), ds.n_subjects, cfg.subject_effects,
                                   cfg.collapse_transitions, pr);
  ch.emissions.reserve(K0);
  for (int k = 0; k < K0; ++k) ch.emissions.push_back(sample_prior(prior, pr));

  std::vector<arma::ivec> seeds;
  if (cfg.init_kmeans) {
    seeds = kmeans_labels(ds, K0, pr);
    // Conjugate refresh per seeded state, so the first sweeps see data-scale
    // emission parameters instead of wide prior draws.
    for (int k = 0; k < K0; ++k) {
      arma::mat Y(0, ds.p());
      for (int s = 0; s < n; ++s) {
        const Series& sr = ds.series[s];
        for (int t = 0; t < sr.T(); ++t) {
          if (seeds[s](t) != k) continue;
          bool complete = true;
          for (int d = 0; d < ds.p() && complete; ++d) {
            complete = sr.stat(t, d) == ObsStatus::Observed;
          }
          if (complete) Y.insert_rows(Y.n_rows, sr.values.row(t));
        }
      }
      ch.emissions[k] = posterior_update(prior, Y, pr);
    }
  }

  ch.z.resize(n);
  ch.u.resize(n);
  ch.values.resize(n);
  for (int s = 0; s < n; ++s) {
    const Series& sr = ds.series[s];
    const int T = sr.T();
    RngStream rs = RngStream::derive(cfg.seed, 0, static_cast<std::uint64_t>(StreamTag::kInit),
                                     1 + static_cast<std::uint64_t>(s));
    ch.z[s].set_size(T);
    ch.u[s].set_size(T);
    ch.values[s] = sr.values;

    for (int t = 0; t < T; ++t) {
      const arma::vec x = design_point(sr, t);
      const int j_prev = (t == 0) ? -1 : static_cast<int>(ch.z[s](t - 1));
      int k = 0;
      if (cfg.init_kmeans) {
        k = static_cast<int>(seeds[s](t));
      } else {
        // Sequential walk down the sticks of the prior transition law.
        while (true) {
          if (capped && k == cfg.max_states - 1) break;
          if (k == ch.psbp.K) {
            instantiate_state(ch.psbp, pr);
            ch.emissions.push_back(sample_prior(prior, pr));
          }
          const double phi = norm_cdf(ch.psbp.eta(j_prev, k, sr.subject_index, x));
          if (rs.u01() < phi) break;
          ++k;
        }
      }
      ch.z[s](t) = k;
      const double pi =
          transition_probability(ch.psbp, j_prev, k, sr.subject_index, x, cfg.max_states);
      ch.u[s](t) = pi * rs.u01();
      init_missing_row(ch.values[s], sr, t, ch.emissions[k], ds.lod, rs);
    }
  }

  if (cfg.init_kmeans) {
    // Condition the transition block on the seeded labels from a neutral
    // stick state.  The stick hyperpriors are heavy tailed, and a large
    // variance draw puts the alphas so far into a saturated regime that the
    // probit augmentation walks them back only geometrically, sweep by
    // sweep; meanwhile the realized transition odds override any emission
    // evidence and collapse every series into a handful of states.  Zeroing
    // the regression blocks first makes the single conditioning pass below
    // land directly in the data-supported region.  The slice variables are
    // redrawn at the top of each sweep, so their values under the prior
    // sticks do not persist.
    ch.psbp.alpha.zeros();
    ch.psbp.alpha_init.zeros();
    if (ch.psbp.q > 0) {
      ch.psbp.beta.zeros();
      if (ch.psbp.subject_effects) ch.psbp.gamma.zeros();
    }
    ch.psbp.sigma2_alpha = 1.0;
    ch.psbp.m_alpha = 0.0;
    ch.psbp.v_alpha = 1.0;
    ch.psbp.kappa2 = 1.0;
    std::vector<arma::vec> xs;
    std::vector<TransitionObs> obs;
    std::size_t total = 0;
    for (int s = 0; s < n; ++s) total += ds.series[s].T();
    xs.reserve(total);
    obs.reserve(total);
    for (int s = 0; s < n; ++s) {
      const Series& sr = ds.series[s];
      for (int t = 0; t < sr.T(); ++t) xs.push_back(design_point(sr, t));
    }
    std::size_t off = 0;
    for (int s = 0; s < n; ++s) {
      const Series& sr = ds.series[s];
      for (int t = 0; t < sr.T(); ++t) {
        const int j_prev = (t == 0) ? -1 : static_cast<int>(ch.z[s](t - 1));
        obs.push_back(TransitionObs{sr.subject_index, j_prev,
                                    static_cast<int>(ch.z[s](t)), &xs[off + t]});
      }
      off += sr.T();
    }
    augment_and_update(ch.psbp, obs, pr, capped ? cfg.max_states - 1 : -1);
  }
  return ch;
}

void sample_slices(ChainState& chain, const Dataset& ds, const McmcConfig& cfg,
                   const NiwHyper& prior) {
  const int n = static_cast<int>(ds.series.size());
  const int it = chain.iteration;
  const bool capped = cfg.max_states > 0;

  parallel_for(n, cfg.workers, [&](int s) {
    const Series& sr = ds.series[s];
    RngStream rs = RngStream::derive(chain.seed, it, static_cast<std::uint64_t>(StreamTag::kSlice),
                                     static_cast<std::uint64_t>(s));
    for (int t = 0; t < sr.T(); ++t) {
      const arma::vec x = design_point(sr, t);
      const int j_prev = (t == 0) ? -1 : static_cast<int>(chain.z[s](t - 1));
      const double pi = transition_probability(chain.psbp, j_prev, static_cast<int>(chain.z[s](t)),
                                               sr.subject_index, x, cfg.max_states);
      chain.u[s](t) = pi * rs.u01();
    }
  });

  if (capped) return;

  // Instantiate states until the mass past the sticks is below every slice
  // that could reach it.  Per-series minimum slices bound the support.
  RngStream gr = RngStream::derive(chain.seed, it, static_cast<std::uint64_t>(StreamTag::kGrow), 0);
  arma::vec umin(n);
  for (int s = 0; s < n; ++s) umin(s) = chain.u[s].min();

  if (ds.q() == 0) {
    const arma::vec x;
    const double u_all = umin.min();
    while (tails_at(chain.psbp, 0, x).max() > u_all) {
      instantiate_state(chain.psbp, gr);
      chain.emissions.push_back(sample_prior(prior, gr));
    }
    return;
  }

  while (true) {
    bool grow = false;
    for (int s = 0; s < n && !grow; ++s) {
      const Series& sr = ds.series[s];
      for (int t = 0; t < sr.T() && !grow; ++t) {
        const arma::vec x = design_point(sr, t);
        if (tails_at(chain.psbp, sr.subject_index, x).max() > umin(s)) grow = true;
      }
    }
    if (!grow) break;
    instantiate_state(chain.psbp, gr);
    chain.emissions.push_back(sample_prior(prior, gr));
  }
}

arma::ivec sample_trajectory(int series, const ChainState& chain, const Dataset& ds,
                             const McmcConfig& cfg, RngStream& rng, std::uint64_t* ops) {
  const Series& sr = ds.series[series];
  const int T = sr.T();
  const int K = chain.psbp.K;
  const bool capped = cfg.max_states > 0;
  const arma::mat& values = chain.values[series];

  std::vector<MvnDensity> dens;
  dens.reserve(K);
  for (int k = 0; k < K; ++k) dens.emplace_back(chain.emissions[k]);

  // Stick matrices per time point; a single shared one when there are no
  // covariates, since the design point is then constant.
  const bool constant_design = (ds.q() == 0);
  arma::mat P_const;
  std::vector<arma::mat> P;
  if (constant_design) {
    P_const = stick_matrix_at(chain.psbp, sr.subject_index, arma::vec(), capped);
  } else {
    P.resize(T);
    for (int t = 0; t < T; ++t) {
      P[t] = stick_matrix_at(chain.psbp, sr.subject_index, design_point(sr, t), capped);
    }
  }
  auto sticks = [&](int t) -> const arma::mat& { return constant_design ? P_const : P[t]; };

  // Log-space messages: states whose emission density underflows linear
  // doubles must stay reachable, since the pre-update trajectory guarantees a
  // feasible path through the slice-truncated support.
  const double neg_inf = -std::numeric_limits<double>::infinity();
  arma::mat la(T, K);
  arma::vec logem(K);
  std::uint64_t count = 0;

  for (int t = 0; t < T; ++t) {
    const arma::vec y = values.row(t).t();
    for (int k = 0; k < K; ++k) logem(k) = dens[k].logpdf(y);
    const arma::mat& Pt = sticks(t);
    const double ut = chain.u[series](t);
    if (t == 0) {
      for (int k = 0; k < K; ++k) {
        la(0, k) = (Pt(0, k) > ut) ? logem(k) : neg_inf;
      }
      count += K;
    } else {
      for (int k = 0; k < K; ++k) {
        double mj = neg_inf;
        for (int j = 0; j < K; ++j) {
          if (Pt(j + 1, k) > ut && la(t - 1, j) > mj) mj = la(t - 1, j);
        }
        if (mj == neg_inf) {
          la(t, k) = neg_inf;
          continue;
        }
        double acc = 0.0;
        for (int j = 0; j < K; ++j) {
          if (Pt(j + 1, k) > ut) acc += std::exp(la(t - 1, j) - mj);
        }
        la(t, k) = mj + std::log(acc) + logem(k);
      }
      count += static_cast<std::uint64_t>(K) * K;
    }
    const double m = la.row(t).max();
    if (m == neg_inf) {
      throw_logic("NoFeasibleState", "slice-truncated support is empty");
    }
    la.row(t) -= m;
  }

  arma::ivec z(T);
  arma::rowvec w(K);
  auto draw_masked = [&](int t, const arma::mat* Pn, double un, int znext) {
    double m = neg_inf;
    for (int j = 0; j < K; ++j) {
      const bool ok = (Pn == nullptr) || ((*Pn)(j + 1, znext) > un);
      w(j) = ok ? la(t, j) : neg_inf;
      if (w(j) > m) m = w(j);
    }
    if (m == neg_inf) {
      throw_logic("NoFeasibleState", "slice-truncated support is empty");
    }
    for (int j = 0; j < K; ++j) w(j) = std::exp(w(j) - m);
    return rng.categorical(w.memptr(), K);
  };
  z(T - 1) = draw_masked(T - 1, nullptr, 0.0, 0);
  for (int t = T - 2; t >= 0; --t) {
    z(t) = draw_masked(t, &sticks(t + 1), chain.u[series](t + 1), static_cast<int>(z(t + 1)));
  }

  if (ops) *ops += count;
  return z;
}

double chain_loglik(const ChainState& chain) {
  double total = 0.0;
  std::vector<MvnDensity> dens;
  dens.reserve(chain.psbp.K);
  for (int k = 0; k < chain.psbp.K; ++k) dens.emplace_back(chain.emissions[k]);
  for (std::size_t s = 0; s < chain.values.size(); ++s) {
    const arma::mat& v = chain.values[s];
    for (arma::uword t = 0; t < v.n_rows; ++t) {
      total += dens[chain.z[s](t)].logpdf(v.row(t).t());
    }
  }
  return total;
}

void sweep(ChainState& chain, const Dataset& ds, const McmcConfig& cfg,
           const NiwHyper& prior, PosteriorDraws* draws) {
  chain.iteration += 1;
  const int it = chain.iteration;
  const int n = static_cast<int>(ds.series.size());
  const bool capped = cfg.max_states > 0;

  // 1. Slice variables and state instantiation.
  sample_slices(chain, ds, cfg, prior);

  // 2. Hidden trajectories, one stream per series.
  std::vector<std::uint64_t> ops(n, 0);
  parallel_for(n, cfg.workers, [&](int s) {
    RngStream rs = RngStream::derive(chain.seed, it, static_cast<std::uint64_t>(StreamTag::kTraj),
                                     static_cast<std::uint64_t>(s));
    chain.z[s] = sample_trajectory(s, chain, ds, cfg, rs, &ops[s]);
  });

  // 3. Imputation of MAR and below-limit cells at the new states.
  parallel_for(n, cfg.workers, [&](int s) {
    const Series& sr = ds.series[s];
    RngStream rs = RngStream::derive(chain.seed, it, static_cast<std::uint64_t>(StreamTag::kImpute),
                                     static_cast<std::uint64_t>(s));
    for (int t = 0; t < sr.T(); ++t) {
      bool missing = false;
      for (int d = 0; d < ds.p() && !missing; ++d) {
        missing = sr.stat(t, d) != ObsStatus::Observed;
      }
      if (!missing) continue;
      const arma::vec y = chain.values[s].row(t).t();
      const arma::vec yn = impute_time_point(y, sr.status.row(t),
                                             chain.emissions[chain.z[s](t)], ds.lod, rs,
                                             cfg.trunc_sweeps);
      chain.values[s].row(t) = yn.t();
    }
  });

  // 4. Emission parameters per instantiated state; unoccupied states refresh
  // from the prior, which the slice sampler requires.
  {
    const int K = chain.psbp.K;
    std::vector<int> counts(K, 0);
    for (int s = 0; s < n; ++s) {
      for (arma::uword t = 0; t < chain.z[s].n_elem; ++t) counts[chain.z[s](t)]++;
    }
    for (int k = 0; k < K; ++k) {
      RngStream rk = RngStream::derive(chain.seed, it, static_cast<std::uint64_t>(StreamTag::kEmit),
                                       static_cast<std::uint64_t>(k));
      arma::mat Y(counts[k], ds.p());
      int r = 0;
      for (int s = 0; s < n; ++s) {
        for (arma::uword t = 0; t < chain.z[s].n_elem; ++t) {
          if (chain.z[s](t) == k) Y.row(r++) = chain.values[s].row(t);
        }
      }
      if (cfg.emission_update == EmissionUpdate::Conjugate || counts[k] == 0) {
        chain.emissions[k] = posterior_update(prior, Y, rk);
      } else {
        chain.emissions[k] = mh_decomposition_update(prior, Y, chain.emissions[k],
                                                     cfg.mh_step, rk);
      }
    }
  }

  // 5. Transition parameters by probit augmentation over realized moves.
  {
    std::vector<arma::vec> xs;
    std::vector<TransitionObs> obs;
    std::size_t total = 0;
    for (int s = 0; s < n; ++s) total += ds.series[s].T();
    xs.reserve(total);
    obs.reserve(total);
    for (int s = 0; s < n; ++s) {
      const Series& sr = ds.series[s];
      for (int t = 0; t < sr.T(); ++t) xs.push_back(design_point(sr, t));
    }
    std::size_t off = 0;
    for (int s = 0; s < n; ++s) {
      const Series& sr = ds.series[s];
      for (int t = 0; t < sr.T(); ++t) {
        const int j_prev = (t == 0) ? -1 : static_cast<int>(chain.z[s](t - 1));
        obs.push_back(TransitionObs{sr.subject_index, j_prev,
                                    static_cast<int>(chain.z[s](t)), &xs[off + t]});
      }
      off += sr.T();
    }
    RngStream rp = RngStream::derive(chain.seed, it, static_cast<std::uint64_t>(StreamTag::kPsbp), 0);
    augment_and_update(chain.psbp, obs, rp, capped ? cfg.max_states - 1 : -1);
  }

  // 6. Drop trailing states past the highest realized label.  Their
  // parameters are prior draws, so removal is exact; interior gaps stay.
  if (!capped) {
    int max_label = 0;
    for (int s = 0; s < n; ++s) {
      max_label = std::max(max_label, static_cast<int>(chain.z[s].max()));
    }
    const int K_new = max_label + 1;
    if (K_new < chain.psbp.K) {
      remove_trailing_states(chain.psbp, K_new);
      chain.emissions.resize(K_new);
    }
  }

  if (draws) {
    for (int s = 0; s < n; ++s) draws->transition_ops += ops[s];
  }
}

namespace {

void build_imputation_cells(const Dataset& ds, ImputationDraws& out) {
  for (std::size_t s = 0; s < ds.series.size(); ++s) {
    const Series& sr = ds.series[s];
    for (int t = 0; t < sr.T(); ++t) {
      for (int d = 0; d < ds.p(); ++d) {
        const ObsStatus st = sr.stat(t, d);
        if (st != ObsStatus::Observed) {
          out.cells.push_back(CellKey{static_cast<int>(s), t, d, st});
        }
      }
    }
  }
}

void record_draw(PosteriorDraws& draws, const ChainState& ch, const McmcConfig& cfg,
                 int m, int R_total) {
  const int r = draws.n_records();
  draws.iterations.push_back(ch.iteration);
  draws.k_occupied.push_back(ch.occupied_states());
  draws.k_instantiated.push_back(ch.K());
  draws.loglik.push_back(chain_loglik(ch));
  if (cfg.record_states) {
    std::vector<std::vector<int>> zz(ch.z.size());
    for (std::size_t s = 0; s < ch.z.size(); ++s) {
      zz[s].assign(ch.z[s].begin(), ch.z[s].end());
    }
    draws.z.push_back(std::move(zz));
  }
  draws.emission_draws.push_back(ch.emissions);

  if (!draws.imputations.cells.empty() && R_total > 0) {
    const std::int64_t lo = static_cast<std::int64_t>(r) * m / R_total;
    const std::int64_t hi = static_cast<std::int64_t>(r + 1) * m / R_total;
    if (hi > lo) {
      draws.imputations.iterations.push_back(ch.iteration);
      std::vector<double> row;
      row.reserve(draws.imputations.cells.size());
      for (const CellKey& c : draws.imputations.cells) {
        row.push_back(ch.values[c.series](c.t, c.dim));
      }
      draws.imputations.values.push_back(std::move(row));
    }
  }
}

void run_loop(ChainState& ch, PosteriorDraws& draws, const Dataset& ds,
              const McmcConfig& cfg, const NiwHyper& prior) {
  const int R_total = (cfg.n_iter - cfg.burn_in) / cfg.thin;
  const int m = std::min(R_total, cfg.imputation_draws_retained);
  while (ch.iteration < cfg.n_iter) {
    sweep(ch, ds, cfg, prior, &draws);
    const int it = ch.iteration;
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      record_draw(draws, ch, cfg, m, R_total);
    }
    if (cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0 &&
        it < cfg.n_iter) {
      write_checkpoint(ch, draws, cfg.checkpoint_path);
    }
  }
}

}  // namespace

PosteriorDraws run(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior) {
  ChainState ch = init_chain(ds, cfg, prior);
  PosteriorDraws draws;
  draws.n_series = static_cast<int>(ds.series.size());
  build_imputation_cells(ds, draws.imputations);
  run_loop(ch, draws, ds, cfg, prior);
  return draws;
}

PosteriorDraws resume(const Dataset& ds, const McmcConfig& cfg, const NiwHyper& prior,
                      const std::string& checkpoint_path) {
  cfg.validate();
  ChainState ch;
  PosteriorDraws draws;
  read_checkpoint(ch, draws, checkpoint_path);
  if (ch.seed != cfg.seed) {
    throw_config("SeedMismatch", "checkpoint was written under a different seed");
  }
  if (draws.n_series != static_cast<int>(ds.series.size())) {
    throw_config("DatasetMismatch", "checkpoint series count does not match data");
  }
  run_loop(ch, draws, ds, cfg, prior);
  return draws;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization: native-endian binary, written atomically.

namespace {

constexpr char kMagic[4] = {'I', 'H', 'M', 'M'};
constexpr std::uint32_t kVersion = 1;

void wr(std::ostream& os, const void* p, std::size_t nbytes) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(nbytes));
}
void wr_u32(std::ostream& os, std::uint32_t v) { wr(os, &v, sizeof v); }
void wr_u64(std::ostream& os, std::uint64_t v) { wr(os, &v, sizeof v); }
void wr_i64(std::ostream& os, std::int64_t v) { wr(os, &v, sizeof v); }
void wr_f64(std::ostream& os, double v) { wr(os, &v, sizeof v); }
void wr_mat(std::ostream& os, const arma::mat& m) {
  wr_i64(os, static_cast<std::int64_t>(m.n_rows));
  wr_i64(os, static_cast<std::int64_t>(m.n_cols));
  wr(os, m.memptr(), m.n_elem * sizeof(double));
}
void wr_vec(std::ostream& os, const arma::vec& v) {
  wr_i64(os, static_cast<std::int64_t>(v.n_elem));
  wr(os, v.memptr(), v.n_elem * sizeof(double));
}
void wr_cube(std::ostream& os, const arma::cube& c) {
  wr_i64(os, static_cast<std::int64_t>(c.n_rows));
  wr_i64(os, static_cast<std::int64_t>(c.n_cols));
  wr_i64(os, static_cast<std::int64_t>(c.n_slices));
  wr(os, c.memptr(), c.n_elem * sizeof(double));
}

void rd(std::istream& is, void* p, std::size_t nbytes) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(nbytes));
  if (!is) throw_io("CheckpointCorrupt", "checkpoint file truncated");
}
std::uint32_t rd_u32(std::istream& is) { std::uint32_t v; rd(is, &v, sizeof v); return v; }
std::uint64_t rd_u64(std::istream& is) { std::uint64_t v; rd(is, &v, sizeof v); return v; }
std::int64_t rd_i64(std::istream& is) { std::int64_t v; rd(is, &v, sizeof v); return v; }
double rd_f64(std::istream& is) { double v; rd(is, &v, sizeof v); return v; }
arma::mat rd_mat(std::istream& is) {
  const std::int64_t r = rd_i64(is);
  const std::int64_t c = rd_i64(is);
  if (r < 0 || c < 0) throw_io("CheckpointCorrupt", "negative matrix extent");
  arma::mat m(static_cast<arma::uword>(r), static_cast<arma::uword>(c));
  rd(is, m.memptr(), m.n_elem * sizeof(double));
  return m;
}
arma::vec rd_vec(std::istream& is) {
  const std::int64_t n = rd_i64(is);
  if (n < 0) throw_io("CheckpointCorrupt", "negative vector extent");
  arma::vec v(static_cast<arma::uword>(n));
  rd(is, v.memptr(), v.n_elem * sizeof(double));
  return v;
}
arma::cube rd_cube(std::istream& is) {
  const std::int64_t r = rd_i64(is);
  const std::int64_t c = rd_i64(is);
  const std::int64_t s = rd_i64(is);
  if (r < 0 || c < 0 || s < 0) throw_io("CheckpointCorrupt", "negative cube extent");
  arma::cube out(static_cast<arma::uword>(r), static_cast<arma::uword>(c),
                 static_cast<arma::uword>(s));
  rd(is, out.memptr(), out.n_elem * sizeof(double));
  return out;
}

}  // namespace

void write_checkpoint(const ChainState& chain, const PosteriorDraws& draws,
                      const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw_io("FileOpenFailed", "cannot write checkpoint: " + tmp);

    wr(os, kMagic, 4);
    wr_u32(os, kVersion);
    wr_u64(os, chain.seed);
    wr_i64(os, chain.iteration);

    const PsbpParams& P = chain.psbp;
    wr_i64(os, P.K);
    wr_i64(os, P.q);
    wr_i64(os, P.n_subjects);
    wr_u32(os, P.subject_effects ? 1 : 0);
    wr_u32(os, P.shared_row ? 1 : 0);
    wr_f64(os, P.sigma2_alpha);
    wr_f64(os, P.m_alpha);
    wr_f64(os, P.v_alpha);
    wr_f64(os, P.kappa2);
    wr_mat(os, P.alpha);
    wr_vec(os, P.alpha_init);
    wr_mat(os, P.beta);
    wr_cube(os, P.gamma);

    wr_i64(os, static_cast<std::int64_t>(chain.emissions.size()));
    for (const EmissionParams& e : chain.emissions) {
      wr_vec(os, e.mu);
      wr_mat(os, e.sigma);
    }

    wr_i64(os, static_cast<std::int64_t>(chain.z.size()));
    for (std::size_t s = 0; s < chain.z.size(); ++s) {
      const arma::ivec& zs = chain.z[s];
      wr_i64(os, static_cast<std::int64_t>(zs.n_elem));
      for (arma::uword t = 0; t < zs.n_elem; ++t) wr_i64(os, zs(t));
      wr_vec(os, chain.u[s]);
      wr_mat(os, chain.values[s]);
    }

    // Accumulated draws, so a resumed run finishes with identical output.
    wr_i64(os, draws.n_series);
    wr_u64(os, draws.transition_ops);
    const std::int64_t R = draws.n_records();
    wr_i64(os, R);
    for (int r = 0; r < R; ++r) {
      wr_i64(os, draws.iterations[r]);
      wr_i64(os, draws.k_occupied[r]);
      wr_i64(os, draws.k_instantiated[r]);
      wr_f64(os, draws.loglik[r]);
    }
    wr_i64(os, static_cast<std::int64_t>(draws.z.size()));
    for (const auto& rec : draws.z) {
      wr_i64(os, static_cast<std::int64_t>(rec.size()));
      for (const auto& zs : rec) {
        wr_i64(os, static_cast<std::int64_t>(zs.size()));
        for (int v : zs) wr_i64(os, v);
      }
    }
    wr_i64(os, static_cast<std::int64_t>(draws.emission_draws.size()));
    for (const auto& rec : draws.emission_draws) {
      wr_i64(os, static_cast<std::int64_t>(rec.size()));
      for (const EmissionParams& e : rec) {
        wr_vec(os, e.mu);
        wr_mat(os, e.sigma);
      }
    }
    const ImputationDraws& imp = draws.imputations;
    wr_i64(os, static_cast<std::int64_t>(imp.cells.size()));
    for (const CellKey& c : imp.cells) {
      wr_i64(os, c.series);
      wr_i64(os, c.t);
      wr_i64(os, c.dim);
      wr_i64(os, static_cast<std::int64_t>(c.status));
    }
    wr_i64(os, static_cast<std::int64_t>(imp.iterations.size()));
    for (int itn : imp.iterations) wr_i64(os, itn);
    wr_i64(os, static_cast<std::int64_t>(imp.values.size()));
    for (const auto& row : imp.values) {
      wr_i64(os, static_cast<std::int64_t>(row.size()));
      wr(os, row.data(), row.size() * sizeof(double));
    }
    if (!os) throw_io("FileWriteFailed", "checkpoint write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw_io("FileWriteFailed", "cannot move checkpoint into place: " + path);
}

void read_checkpoint(ChainState& chain, PosteriorDraws& draws, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_io("FileOpenFailed", "cannot read checkpoint: " + path);

  char magic[4];
  rd(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw_io("CheckpointMagicMismatch", "not a checkpoint file: " + path);
  }
  const std::uint32_t version = rd_u32(is);
  if (version != kVersion) {
    throw_io("CheckpointVersionMismatch", "unsupported checkpoint version");
  }

  chain = ChainState();
  draws = PosteriorDraws();

  chain.seed = rd_u64(is);
  chain.iteration = static_cast<int>(rd_i64(is));

  PsbpParams& P = chain.psbp;
  P.K = static_cast<int>(rd_i64(is));
  P.q = static_cast<int>(rd_i64(is));
  P.n_subjects = static_cast<int>(rd_i64(is));
  P.subject_effects = rd_u32(is) != 0;
  P.shared_row = rd_u32(is) != 0;
  P.sigma2_alpha = rd_f64(is);
  P.m_alpha = rd_f64(is);
  P.v_alpha = rd_f64(is);
  P.kappa2 = rd_f64(is);
  P.alpha = rd_mat(is);
  P.alpha_init = rd_vec(is);
  P.beta = rd_mat(is);
  P.gamma = rd_cube(is);

  const std::int64_t n_emit = rd_i64(is);
  chain.emissions.resize(n_emit);
  for (auto& e : chain.emissions) {
    e.mu = rd_vec(is);
    e.sigma = rd_mat(is);
  }

  const std::int64_t n_series = rd_i64(is);
  chain.z.resize(n_series);
  chain.u.resize(n_series);
  chain.values.resize(n_series);
  for (std::int64_t s = 0; s < n_series; ++s) {
    const std::int64_t T = rd_i64(is);
    chain.z[s].set_size(T);
    for (std::int64_t t = 0; t < T; ++t) chain.z[s](t) = rd_i64(is);
    chain.u[s] = rd_vec(is);
    chain.values[s] = rd_mat(is);
  }

  draws.n_series = static_cast<int>(rd_i64(is));
  draws.transition_ops = rd_u64(is);
  const std::int64_t R = rd_i64(is);
  for (std::int64_t r = 0; r < R; ++r) {
    draws.iterations.push_back(static_cast<int>(rd_i64(is)));
    draws.k_occupied.push_back(static_cast<int>(rd_i64(is)));
    draws.k_instantiated.push_back(static_cast<int>(rd_i64(is)));
    draws.loglik.push_back(rd_f64(is));
  }
  const std::int64_t nz = rd_i64(is);
  draws.z.resize(nz);
  for (auto& rec : draws.z) {
    rec.resize(rd_i64(is));
    for (auto& zs : rec) {
      zs.resize(rd_i64(is));
      for (auto& v : zs) v = static_cast<int>(rd_i64(is));
    }
  }
  const std::int64_t ne = rd_i64(is);
  draws.emission_draws.resize(ne);
  for (auto& rec : draws.emission_draws) {
    rec.resize(rd_i64(is));
    for (EmissionParams& e : rec) {
      e.mu = rd_vec(is);
      e.sigma = rd_mat(is);
    }
  }
  ImputationDraws& imp = draws.imputations;
  const std::int64_t nc = rd_i64(is);
  imp.cells.resize(nc);
  for (CellKey& c : imp.cells) {
    c.series = static_cast<int>(rd_i64(is));
    c.t = static_cast<int>(rd_i64(is));
    c.dim = static_cast<int>(rd_i64(is));
    c.status = static_cast<ObsStatus>(rd_i64(is));
  }
  const std::int64_t ni = rd_i64(is);
  imp.iterations.resize(ni);
  for (auto& v : imp.iterations) v = static_cast<int>(rd_i64(is));
  const std::int64_t nr = rd_i64(is);
  imp.values.resize(nr);
  for (auto& row : imp.values) {
    row.resize(rd_i64(is));
    rd(is, row.data(), row.size() * sizeof(double));
  }
}

// ---------------------------------------------------------------------------
// Draw logs.

void write_draw_logs(const PosteriorDraws& draws, const Dataset& ds,
                     const std::string& out_dir, bool include_states) {
  std::filesystem::create_directories(out_dir);
  auto open = [&](const std::string& name) {
    std::ofstream os(out_dir + "/" + name, std::ios::trunc);
    if (!os) throw_io("FileOpenFailed", "cannot write " + out_dir + "/" + name);
    return os;
  };

  if (include_states && !draws.z.empty()) {
    std::ofstream os = open("states.csv");
    os << "iteration,series,t,state\n";
    for (int r = 0; r < draws.n_records(); ++r) {
      for (std::size_t s = 0; s < draws.z[r].size(); ++s) {
        const auto& zs = draws.z[r][s];
        for (std::size_t t = 0; t < zs.size(); ++t) {
          os << draws.iterations[r] << ',' << s << ',' << t << ',' << zs[t] << '\n';
        }
      }
    }
  }

  {
    std::ofstream os = open("imputations.csv");
    os << "iteration,series,t,dim,value\n";
    const ImputationDraws& imp = draws.imputations;
    for (std::size_t r = 0; r < imp.values.size(); ++r) {
      for (std::size_t c = 0; c < imp.cells.size(); ++c) {
        const CellKey& k = imp.cells[c];
        os << imp.iterations[r] << ',' << k.series << ',' << k.t << ','
           << (k.dim + 1) << ',' << fmt_double(imp.values[r][c]) << '\n';
      }
    }
  }

  {
    std::ofstream os = open("params.csv");
    os << "iteration,state,parameter,value\n";
    const int p = ds.p();
    for (int r = 0; r < draws.n_records(); ++r) {
      for (std::size_t k = 0; k < draws.emission_draws[r].size(); ++k) {
        const EmissionParams& e = draws.emission_draws[r][k];
        for (int d = 0; d < p; ++d) {
          os << draws.iterations[r] << ',' << k << ",mu_" << (d + 1) << ','
             << fmt_double(e.mu(d)) << '\n';
        }
        for (int a = 0; a < p; ++a) {
          for (int b = a; b < p; ++b) {
            os << draws.iterations[r] << ',' << k << ",sigma_" << (a + 1) << '_'
               << (b + 1) << ',' << fmt_double(e.sigma(a, b)) << '\n';
          }
        }
      }
    }
  }

  {
    std::ofstream os = open("scalars.csv");
    os << "iteration,K,loglik\n";
    for (int r = 0; r < draws.n_records(); ++r) {
      os << draws.iterations[r] << ',' << draws.k_occupied[r] << ','
         << fmt_double(draws.loglik[r]) << '\n';
    }
  }
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

long parse_long(const std::string& s, const std::string& where) {
  long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw_io("DrawLogParseFailed", "bad integer '" + s + "' in " + where);
  }
  return v;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw_io("DrawLogParseFailed", "bad number '" + s + "' in " + where);
  }
  return v;
}

// Streams a record-major CSV, handing each data row to `row` after checking
// the header; absent files are skipped when optional.
bool for_each_row(const std::string& path, const std::string& header, bool required,
                  const std::function<void(const std::vector<std::string>&)>& row) {
  std::ifstream is(path);
  if (!is) {
    if (required) throw_io("FileOpenFailed", "cannot read " + path);
    return false;
  }
  std::string line;
  if (!std::getline(is, line) || line != header) {
    throw_io("DrawLogParseFailed", "unexpected header in " + path);
  }
  const std::size_t n_fields = split_line(header).size();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_line(line);
    if (f.size() != n_fields) {
      throw_io("DrawLogParseFailed", "bad field count in " + path);
    }
    row(f);
  }
  return true;
}

}  // namespace

PosteriorDraws read_draw_logs(const std::string& out_dir) {
  PosteriorDraws draws;

  std::map<int, int> rec_of;
  for_each_row(out_dir + "/scalars.csv", "iteration,K,loglik", true,
               [&](const std::vector<std::string>& f) {
                 const int it = static_cast<int>(parse_long(f[0], "scalars.csv"));
                 rec_of.emplace(it, draws.n_records());
                 draws.iterations.push_back(it);
                 draws.k_occupied.push_back(static_cast<int>(parse_long(f[1], "scalars.csv")));
                 draws.loglik.push_back(parse_double(f[2], "scalars.csv"));
               });
  const int R = draws.n_records();
  if (R == 0) throw_io("DrawLogParseFailed", out_dir + "/scalars.csv holds no records");

  auto record_index = [&](const std::string& f0, const char* file) {
    const int it = static_cast<int>(parse_long(f0, file));
    const auto at = rec_of.find(it);
    if (at == rec_of.end()) {
      throw_io("DrawLogParseFailed",
               std::string(file) + " references iteration " + f0 + " absent from scalars.csv");
    }
    return at->second;
  };

  const bool have_states =
      for_each_row(out_dir + "/states.csv", "iteration,series,t,state", false,
                   [&](const std::vector<std::string>& f) {
                     const int r = record_index(f[0], "states.csv");
                     if (draws.z.empty()) draws.z.resize(R);
                     const int s = static_cast<int>(parse_long(f[1], "states.csv"));
                     const int t = static_cast<int>(parse_long(f[2], "states.csv"));
                     auto& zr = draws.z[r];
                     if (static_cast<int>(zr.size()) <= s) zr.resize(s + 1);
                     if (static_cast<int>(zr[s].size()) != t) {
                       throw_io("DrawLogParseFailed", "states.csv rows out of order");
                     }
                     zr[s].push_back(static_cast<int>(parse_long(f[3], "states.csv")));
                     draws.n_series = std::max(draws.n_series, s + 1);
                   });
  (void)have_states;

  for_each_row(
      out_dir + "/params.csv", "iteration,state,parameter,value", false,
      [&](const std::vector<std::string>& f) {
        const int r = record_index(f[0], "params.csv");
        if (draws.emission_draws.empty()) draws.emission_draws.resize(R);
        const int k = static_cast<int>(parse_long(f[1], "params.csv"));
        auto& states = draws.emission_draws[r];
        if (static_cast<int>(states.size()) <= k) states.resize(k + 1);
        EmissionParams& e = states[k];
        const std::string& name = f[2];
        const double v = parse_double(f[3], "params.csv");
        if (name.rfind("mu_", 0) == 0) {
          const int d = static_cast<int>(parse_long(name.substr(3), "params.csv")) - 1;
          if (static_cast<int>(e.mu.n_elem) <= d) e.mu.resize(d + 1);
          e.mu(d) = v;
        } else if (name.rfind("sigma_", 0) == 0) {
          const std::size_t us = name.find('_', 6);
          if (us == std::string::npos) {
            throw_io("DrawLogParseFailed", "bad parameter name " + name);
          }
          const int a = static_cast<int>(parse_long(name.substr(6, us - 6), "params.csv")) - 1;
          const int b = static_cast<int>(parse_long(name.substr(us + 1), "params.csv")) - 1;
          const int need = std::max(a, b) + 1;
          if (static_cast<int>(e.sigma.n_rows) < need) {
            const arma::mat old = e.sigma;
            e.sigma.zeros(need, need);
            if (old.n_rows > 0) e.sigma.submat(0, 0, old.n_rows - 1, old.n_cols - 1) = old;
          }
          e.sigma(a, b) = v;
          e.sigma(b, a) = v;
        } else {
          throw_io("DrawLogParseFailed", "bad parameter name " + name);
        }
      });
  for (const auto& states : draws.emission_draws) {
    draws.k_instantiated.push_back(static_cast<int>(states.size()));
  }
  if (draws.emission_draws.empty()) draws.k_instantiated.assign(R, 0);

  // The log schema has no status column; cells are keyed by coordinates.
  std::map<std::tuple<int, int, int>, std::size_t> cell_of;
  int last_imp_iter = -1;
  for_each_row(out_dir + "/imputations.csv", "iteration,series,t,dim,value", false,
               [&](const std::vector<std::string>& f) {
                 const int it = static_cast<int>(parse_long(f[0], "imputations.csv"));
                 const int s = static_cast<int>(parse_long(f[1], "imputations.csv"));
                 const int t = static_cast<int>(parse_long(f[2], "imputations.csv"));
                 const int d = static_cast<int>(parse_long(f[3], "imputations.csv")) - 1;
                 const double v = parse_double(f[4], "imputations.csv");
                 if (it != last_imp_iter) {
                   draws.imputations.iterations.push_back(it);
                   draws.imputations.values.emplace_back();
                   last_imp_iter = it;
                 }
                 auto& row = draws.imputations.values.back();
                 if (draws.imputations.values.size() == 1) {
                   cell_of[{s, t, d}] = draws.imputations.cells.size();
                   draws.imputations.cells.push_back(CellKey{s, t, d, ObsStatus::MAR});
                   row.push_back(v);
                 } else {
                   const auto at = cell_of.find({s, t, d});
                   if (at == cell_of.end() || at->second != row.size()) {
                     throw_io("DrawLogParseFailed", "imputations.csv cell order varies");
                   }
                   row.push_back(v);
                 }
               });
  for (const auto& row : draws.imputations.values) {
    if (row.size() != draws.imputations.cells.size()) {
      throw_io("DrawLogParseFailed", "imputations.csv row is incomplete");
    }
  }
  return draws;
}

}  // namespace ihmm
