#include "ihmm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

#include "ihmm/errors.hpp"

namespace ihmm {

namespace {

// Dense 0-based relabeling by first appearance; the distinct labels, in that
// order, are returned through `orig`.
std::vector<int> densify(const std::vector<int>& labels, std::vector<int>& orig) {
  std::map<int, int> idx;
  std::vector<int> out(labels.size());
  orig.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = idx.find(labels[i]);
    if (it == idx.end()) {
      it = idx.emplace(labels[i], static_cast<int>(orig.size())).first;
      orig.push_back(labels[i]);
    }
    out[i] = it->second;
  }
  return out;
}

arma::mat contingency(const std::vector<int>& a, const std::vector<int>& b, int na, int nb) {
  arma::mat c(na, nb, arma::fill::zeros);
  for (std::size_t i = 0; i < a.size(); ++i) c(a[i], b[i]) += 1.0;
  return c;
}

// Min-cost assignment of every row to a distinct column, n_rows <= n_cols.
// Shortest augmenting paths on the dual potentials, O(n^2 m).
std::vector<int> min_cost_rows(const arma::mat& cost) {
  const int n = static_cast<int>(cost.n_rows);
  const int m = static_cast<int>(cost.n_cols);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> match(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (match[j] > 0) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

void require_same_length(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size())
    throw_config("LengthMismatch", "partitions have " + std::to_string(a.size()) + " and " +
                                       std::to_string(b.size()) + " labels");
  if (a.empty()) throw_config("LengthMismatch", "partitions are empty");
}

void require_recorded_states(const PosteriorDraws& draws) {
  if (draws.n_records() == 0) throw_config("NoDraws", "no retained draws");
  if (draws.z.empty()) throw_config("NoDraws", "state paths were not recorded");
}

std::ofstream open_csv(const std::string& path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("FileOpenFailed", "cannot write " + path);
  return os;
}

void put_field(std::ofstream& os, double v) {
  if (std::isfinite(v)) os << fmt_double(v);
}

}  // namespace

double k_hat(const PosteriorDraws& draws) {
  if (draws.n_records() == 0) throw_config("NoDraws", "no retained draws");
  double total = 0.0;
  for (int k : draws.k_occupied) total += k;
  return total / static_cast<double>(draws.k_occupied.size());
}

std::vector<int> pool_labels(const std::vector<std::vector<int>>& z) {
  std::vector<int> out;
  for (const auto& zs : z) out.insert(out.end(), zs.begin(), zs.end());
  return out;
}

std::vector<int> pool_labels(const std::vector<arma::ivec>& z) {
  std::vector<int> out;
  for (const auto& zs : z)
    for (arma::uword t = 0; t < zs.n_elem; ++t) out.push_back(static_cast<int>(zs[t]));
  return out;
}

std::vector<int> overlap_assignment(const std::vector<int>& est, const std::vector<int>& tru,
                                    int n_est, int n_tru) {
  require_same_length(est, tru);
  const arma::mat c = contingency(est, tru, n_est, n_tru);
  std::vector<int> est_to_true(n_est, -1);
  if (n_est <= n_tru) {
    est_to_true = min_cost_rows(-c);
  } else {
    const std::vector<int> true_to_est = min_cost_rows(-c.t());
    for (int k = 0; k < n_tru; ++k) est_to_true[true_to_est[k]] = k;
  }
  return est_to_true;
}

double hamming_distance(const std::vector<int>& est, const std::vector<int>& tru) {
  require_same_length(est, tru);
  std::vector<int> ea, ta;
  const std::vector<int> e = densify(est, ea);
  const std::vector<int> t = densify(tru, ta);
  const int n_est = static_cast<int>(ea.size());
  const int n_tru = static_cast<int>(ta.size());
  const std::vector<int> map = overlap_assignment(e, t, n_est, n_tru);
  const arma::mat c = contingency(e, t, n_est, n_tru);
  double overlap = 0.0;
  for (int i = 0; i < n_est; ++i)
    if (map[i] >= 0) overlap += c(i, map[i]);
  return 1.0 - overlap / static_cast<double>(est.size());
}

double mu_mse(const PosteriorDraws& draws, const SimTruth& truth) {
  require_recorded_states(draws);

  std::vector<int> true_orig;
  const std::vector<int> tru = densify(pool_labels(truth.z_true), true_orig);
  const int n_tru = static_cast<int>(true_orig.size());

  double total = 0.0;
  for (int r = 0; r < draws.n_records(); ++r) {
    std::vector<int> est_orig;
    const std::vector<int> est = densify(pool_labels(draws.z[r]), est_orig);
    const int n_est = static_cast<int>(est_orig.size());
    const std::vector<int> est_to_true = overlap_assignment(est, tru, n_est, n_tru);

    std::vector<int> matched_est(n_tru, -1);
    for (int e = 0; e < n_est; ++e)
      if (est_to_true[e] >= 0) matched_est[est_to_true[e]] = e;

    double state_sum = 0.0;
    for (int c = 0; c < n_tru; ++c) {
      const arma::vec& mu_k = truth.mu_true.at(true_orig[c]);
      if (matched_est[c] >= 0) {
        const int label = est_orig[matched_est[c]];
        const arma::vec& mu_hat = draws.emission_draws[r].at(label).mu;
        state_sum += arma::accu(arma::square(mu_hat - mu_k)) / mu_k.n_elem;
      } else {
        state_sum += arma::accu(arma::square(mu_k)) / mu_k.n_elem;
      }
    }
    total += state_sum / n_tru;
  }
  return total / draws.n_records();
}

ImpError imputation_error(const std::vector<ImputationRecord>& records,
                          const std::vector<RemovedCell>& removed, ObsStatus mechanism) {
  std::map<std::tuple<int, int, int>, double> truth;
  for (const RemovedCell& c : removed)
    if (c.mechanism == mechanism) truth[{c.series, c.t, c.dim}] = c.true_value;
  if (truth.empty()) throw_config("NoCells", "no removed cells with the requested mechanism");

  double sq = 0.0, err = 0.0;
  long n = 0;
  for (const ImputationRecord& rec : records) {
    for (std::size_t c = 0; c < rec.cells.size(); ++c) {
      const CellKey& key = rec.cells[c];
      const auto it = truth.find({key.series, key.t, key.dim});
      if (it == truth.end()) continue;
      const double e = rec.values[c] - it->second;
      sq += e * e;
      err += e;
      ++n;
    }
  }
  if (n == 0) throw_config("NoCells", "imputation draws cover none of the removed cells");
  return {sq / n, err / n};
}

ImpError imputation_error(const ImputationDraws& draws, const std::vector<RemovedCell>& removed,
                          ObsStatus mechanism) {
  std::vector<ImputationRecord> records(draws.values.size());
  for (std::size_t r = 0; r < draws.values.size(); ++r) {
    records[r].draw_index = static_cast<int>(r + 1);
    records[r].cells = draws.cells;
    records[r].values = draws.values[r];
  }
  return imputation_error(records, removed, mechanism);
}

double variation_of_information(const std::vector<int>& a, const std::vector<int>& b) {
  require_same_length(a, b);
  std::vector<int> oa, ob;
  const std::vector<int> da = densify(a, oa);
  const std::vector<int> db = densify(b, ob);
  const arma::mat c = contingency(da, db, oa.size(), ob.size());
  const double n = static_cast<double>(a.size());
  const arma::vec ra = arma::sum(c, 1);
  const arma::rowvec cb = arma::sum(c, 0);

  double ha = 0.0, hb = 0.0, mi = 0.0;
  for (arma::uword i = 0; i < ra.n_elem; ++i) ha -= ra[i] / n * std::log(ra[i] / n);
  for (arma::uword j = 0; j < cb.n_elem; ++j) hb -= cb[j] / n * std::log(cb[j] / n);
  for (arma::uword i = 0; i < c.n_rows; ++i)
    for (arma::uword j = 0; j < c.n_cols; ++j)
      if (c(i, j) > 0.0) mi += c(i, j) / n * std::log(c(i, j) * n / (ra[i] * cb[j]));
  return ha + hb - 2.0 * mi;
}

PointPartition point_estimate_partition(const PosteriorDraws& draws, int subsample) {
  require_recorded_states(draws);
  const int R = draws.n_records();
  if (R < 2) throw_config("NoDraws", "need at least two retained draws");

  std::vector<int> cand;
  if (subsample > 0 && subsample < R) {
    const int m = std::max(2, subsample);
    for (int i = 0; i < m; ++i) cand.push_back(static_cast<int>(static_cast<long>(i) * R / m));
  } else {
    for (int r = 0; r < R; ++r) cand.push_back(r);
  }
  const int m = static_cast<int>(cand.size());

  // Dense pooled labels once per candidate; each pair then costs O(T + K^2).
  std::vector<std::vector<int>> dense(m);
  std::vector<int> n_labels(m);
  for (int i = 0; i < m; ++i) {
    std::vector<int> orig;
    dense[i] = densify(pool_labels(draws.z[cand[i]]), orig);
    n_labels[i] = static_cast<int>(orig.size());
  }

  arma::vec avg(m, arma::fill::zeros);
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const arma::mat c = contingency(dense[i], dense[j], n_labels[i], n_labels[j]);
      const double n = static_cast<double>(dense[i].size());
      const arma::vec ri = arma::sum(c, 1);
      const arma::rowvec cj = arma::sum(c, 0);
      double ha = 0.0, hb = 0.0, mi = 0.0;
      for (arma::uword k = 0; k < ri.n_elem; ++k) ha -= ri[k] / n * std::log(ri[k] / n);
      for (arma::uword k = 0; k < cj.n_elem; ++k) hb -= cj[k] / n * std::log(cj[k] / n);
      for (arma::uword r = 0; r < c.n_rows; ++r)
        for (arma::uword s = 0; s < c.n_cols; ++s)
          if (c(r, s) > 0.0) mi += c(r, s) / n * std::log(c(r, s) * n / (ri[r] * cj[s]));
      const double vi = ha + hb - 2.0 * mi;
      avg[i] += vi;
      avg[j] += vi;
    }
  }
  avg /= static_cast<double>(m - 1);

  const int best = static_cast<int>(avg.index_min());
  PointPartition pp;
  pp.record_index = cand[best];
  pp.avg_vi = avg[best];
  pp.z = draws.z[pp.record_index];
  return pp;
}

Crosstab microenv_crosstab(const std::vector<std::vector<int>>& z, const Dataset& ds) {
  if (z.size() != ds.series.size())
    throw_config("LengthMismatch", "partition covers " + std::to_string(z.size()) +
                                       " series, dataset has " + std::to_string(ds.series.size()));
  std::map<std::string, int> env_idx;
  for (const Series& sr : ds.series) {
    if (sr.microenv.empty())
      throw_config("NoLabels", "series " + sr.subject_id + "/" + sr.day_id +
                                   " carries no microenvironment labels");
    for (const std::string& e : sr.microenv) env_idx.emplace(e, 0);
  }
  Crosstab tab;
  for (auto& kv : env_idx) {
    kv.second = static_cast<int>(tab.env_labels.size());
    tab.env_labels.push_back(kv.first);
  }

  int n_states = 0;
  for (const auto& zs : z)
    for (int k : zs) n_states = std::max(n_states, k + 1);
  tab.counts.zeros(n_states, tab.env_labels.size());
  for (std::size_t s = 0; s < z.size(); ++s) {
    if (z[s].size() != static_cast<std::size_t>(ds.series[s].T()))
      throw_config("LengthMismatch", "partition length does not match series " +
                                         std::to_string(s));
    for (std::size_t t = 0; t < z[s].size(); ++t)
      tab.counts(z[s][t], env_idx.at(ds.series[s].microenv[t])) += 1;
  }
  return tab;
}

double aggregate_k_hat(const std::vector<double>& per_series) {
  if (per_series.empty()) throw_config("LengthMismatch", "no per-series values");
  double total = 0.0;
  for (double v : per_series) total += v;
  return total;
}

double aggregate_hamming(const std::vector<double>& per_series) {
  if (per_series.empty()) throw_config("LengthMismatch", "no per-series values");
  double total = 0.0;
  for (double v : per_series) total += v;
  return total / static_cast<double>(per_series.size());
}

static void metrics_header(std::ofstream& os) {
  os << "k_hat,hamming,mu_mse,mar_mse,mar_bias,lod_mse,lod_bias\n";
}

static void metrics_row(std::ofstream& os, const MetricReport& r) {
  put_field(os, r.k_hat);
  os << ',';
  put_field(os, r.hamming);
  os << ',';
  put_field(os, r.mu_mse);
  os << ',';
  put_field(os, r.mar_mse);
  os << ',';
  put_field(os, r.mar_bias);
  os << ',';
  put_field(os, r.lod_mse);
  os << ',';
  put_field(os, r.lod_bias);
  os << '\n';
}

void write_metrics(const MetricReport& report, const std::string& path) {
  std::ofstream os = open_csv(path);
  metrics_header(os);
  metrics_row(os, report);
  if (!os) throw_io("FileWriteFailed", "short write to " + path);
}

void write_metrics(const std::vector<MetricReport>& replicates, const std::string& path) {
  std::ofstream os = open_csv(path);
  os << "replicate,";
  metrics_header(os);
  for (std::size_t i = 0; i < replicates.size(); ++i) {
    os << (i + 1) << ',';
    metrics_row(os, replicates[i]);
  }
  if (!os) throw_io("FileWriteFailed", "short write to " + path);
}

void write_crosstab(const Crosstab& tab, const std::string& path) {
  std::ofstream os = open_csv(path);
  os << "state";
  for (const std::string& e : tab.env_labels) os << ',' << e;
  os << ",total\n";
  for (arma::uword k = 0; k < tab.counts.n_rows; ++k) {
    os << k;
    long long row = 0;
    for (arma::uword j = 0; j < tab.counts.n_cols; ++j) {
      os << ',' << tab.counts(k, j);
      row += tab.counts(k, j);
    }
    os << ',' << row << '\n';
  }
  os << "total";
  long long grand = 0;
  for (arma::uword j = 0; j < tab.counts.n_cols; ++j) {
    const long long col = arma::accu(tab.counts.col(j));
    os << ',' << col;
    grand += col;
  }
  os << ',' << grand << '\n';
  if (!os) throw_io("FileWriteFailed", "short write to " + path);
}

void write_point_partition(const PointPartition& pp, const std::string& path) {
  std::ofstream os = open_csv(path);
  os << "series,t,state\n";
  for (std::size_t s = 0; s < pp.z.size(); ++s)
    for (std::size_t t = 0; t < pp.z[s].size(); ++t)
      os << s << ',' << t << ',' << pp.z[s][t] << '\n';
  if (!os) throw_io("FileWriteFailed", "short write to " + path);
}

}  // namespace ihmm
