#include "ihmm/simulation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>

#include "ihmm/errors.hpp"

namespace ihmm {

namespace {

// Diagonal of the mean prior for the true state means; entries past the
// third repeat the last value when p exceeds the reference dimension.
arma::vec mu_prior_diag(int p) {
  const double base[3] = {0.7, 0.4, 0.2};
  arma::vec d(p);
  for (int i = 0; i < p; ++i) d(i) = base[std::min(i, 2)];
  return d;
}

int uniform_int(RngStream& rng, int n) {
  const int v = static_cast<int>(rng.u01() * n);
  return std::min(v, n - 1);
}

}  // namespace

void SimConfig::validate() const {
  if (n_series < 1) throw_config("BadSeriesCount", "n_series must be positive");
  if (T < 2) throw_config("BadLength", "T must be at least 2");
  if (p < 1) throw_config("BadDimension", "p must be positive");
  if (K_true < 1) throw_config("BadStateCount", "K_true must be positive");
  if (missing_level < 0.0 || missing_level >= 0.5) {
    throw_config("LevelUnreachable", "missing_level must lie in [0, 0.5)");
  }
}

std::pair<Dataset, SimTruth> generate(const SimConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_series;
  const int T = cfg.T;
  const int p = cfg.p;
  const int K = cfg.K_true;

  SimTruth truth;

  // Global emission parameters shared by every series.
  {
    RngStream er = RngStream::derive(cfg.seed, 0, static_cast<std::uint64_t>(StreamTag::kSim), 0);
    const arma::vec d = mu_prior_diag(p);
    for (int k = 0; k < K; ++k) {
      arma::vec mu(p);
      for (int i = 0; i < p; ++i) mu(i) = std::sqrt(d(i)) * er.normal();
      truth.mu_true.push_back(mu);

      arma::mat L(p, p, arma::fill::eye);
      for (int r = 1; r < p; ++r) {
        for (int c = 0; c < r; ++c) L(r, c) = std::sqrt(0.5) * er.normal();
      }
      const arma::mat Linv = arma::inv(arma::trimatl(L));
      arma::mat sig = (Linv * Linv.t()) / 100.0;
      truth.sigma_true.push_back(0.5 * (sig + sig.t()));
    }
  }

  Dataset ds;
  ds.lod = arma::vec(p);
  int id_width = 1;
  for (int v = n; v >= 10; v /= 10) ++id_width;

  for (int s = 0; s < n; ++s) {
    RngStream rs = RngStream::derive(cfg.seed, 0, static_cast<std::uint64_t>(StreamTag::kSim),
                                     1 + static_cast<std::uint64_t>(s));

    // Declining-weight state frequencies, then T labels grouped into
    // contiguous blocks.  Redraw the rare case where the first block would
    // have a single point, so the rotation below can wrap the series.
    arma::ivec z(T);
    std::vector<int> order(K);
    while (true) {
      arma::vec rho(K);
      double tot = 0.0;
      for (int k = 0; k < K; ++k) {
        rho(k) = rs.gamma(static_cast<double>(K - k));
        tot += rho(k);
      }
      rho /= tot;

      arma::ivec counts(K, arma::fill::zeros);
      for (int t = 0; t < T; ++t) counts(rs.categorical(rho.memptr(), K)) += 1;

      std::iota(order.begin(), order.end(), 0);
      if (cfg.scenario == Scenario::Distinct) {
        for (int i = K - 1; i > 0; --i) std::swap(order[i], order[uniform_int(rs, i + 1)]);
      }

      int pos = 0;
      int n_first = 0;
      for (int k : order) {
        if (n_first == 0 && counts(k) > 0) n_first = static_cast<int>(counts(k));
        for (int c = 0; c < counts(k); ++c) z(pos++) = k;
      }
      if (n_first >= 2) {
        const int rot = n_first / 2;
        arma::ivec zr(T);
        for (int t = 0; t < T; ++t) zr(t) = z((t + rot) % T);
        z = zr;
        break;
      }
    }

    Series sr;
    sr.subject_id = "s" + std::string(id_width - std::to_string(s + 1).size(), '0') +
                    std::to_string(s + 1);
    sr.day_id = "d1";
    sr.subject_index = s;
    sr.values.set_size(T, p);
    sr.status = arma::Mat<std::uint8_t>(T, p, arma::fill::zeros);
    sr.clock_time = arma::regspace(0, T - 1) / static_cast<double>(T);
    sr.covariates = arma::mat(T, 0);

    for (int t = 0; t < T; ++t) {
      const int k = static_cast<int>(z(t));
      const arma::mat C = arma::chol(truth.sigma_true[k], "lower");
      arma::vec e(p);
      for (int i = 0; i < p; ++i) e(i) = rs.normal();
      sr.values.row(t) = (truth.mu_true[k] + C * e).t();
    }

    truth.z_true.push_back(z);
    ds.subjects[sr.subject_id] = s;
    ds.series.push_back(std::move(sr));
  }
  ds.n_subjects = n;

  // Standardize each dimension over all cells, and map the truth with it.
  const AffineTransform tr = standardize(ds);
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < p; ++i) {
      truth.mu_true[k](i) = tr.to_model(truth.mu_true[k](i), i);
      for (int j = 0; j < p; ++j) {
        truth.sigma_true[k](i, j) /= tr.scale(i) * tr.scale(j);
      }
    }
  }

  // A bound below every value keeps fully observed data consistent.
  for (int d = 0; d < p; ++d) {
    double lo = std::numeric_limits<double>::infinity();
    for (const Series& sr : ds.series) lo = std::min(lo, sr.values.col(d).min());
    ds.lod(d) = lo - 1.0;
  }

  if (cfg.missing_level > 0.0) {
    RngStream mr = RngStream::derive(cfg.seed, 1, static_cast<std::uint64_t>(StreamTag::kSim), 0);
    inject_missing(ds, truth, cfg.missing_level, mr);
  }
  return {std::move(ds), std::move(truth)};
}

void inject_missing(Dataset& ds, SimTruth& truth, double level, RngStream& rng) {
  if (level == 0.0) return;
  if (level < 0.0 || level >= 0.5) {
    throw_config("LevelUnreachable", "missing level must lie in [0, 0.5)");
  }
  const int n = static_cast<int>(ds.series.size());
  const int p = ds.p();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::size_t total = 0;
  for (const Series& sr : ds.series) total += static_cast<std::size_t>(sr.T()) * p;

  // Detection limits: per dimension, the midpoint between the order
  // statistics around the level/2 quantile, so exactly that share of cells
  // falls strictly below and no retained value ties the bound.
  for (int d = 0; d < p; ++d) {
    std::vector<double> pool;
    for (const Series& sr : ds.series) {
      for (int t = 0; t < sr.T(); ++t) pool.push_back(sr.values(t, d));
    }
    std::sort(pool.begin(), pool.end());
    const std::size_t m =
        static_cast<std::size_t>(0.5 * level * static_cast<double>(pool.size()));
    if (m == 0) continue;
    const double thr = 0.5 * (pool[m - 1] + pool[m]);
    ds.lod(d) = thr;
    for (int s = 0; s < n; ++s) {
      Series& sr = ds.series[s];
      for (int t = 0; t < sr.T(); ++t) {
        if (sr.stat(t, d) == ObsStatus::Observed && sr.values(t, d) < thr) {
          truth.removed_cells.push_back(
              RemovedCell{s, t, d, sr.values(t, d), ObsStatus::BelowLOD});
          sr.set_stat(t, d, ObsStatus::BelowLOD);
          sr.values(t, d) = nan;
        }
      }
    }
  }

  // MAR chunks of 1..10 consecutive points in one series and dimension.
  const double target = 0.5 * level * static_cast<double>(total);
  std::size_t n_mar = 0;
  std::size_t observed_left = 0;
  for (const Series& sr : ds.series) {
    for (int t = 0; t < sr.T(); ++t) {
      for (int d = 0; d < p; ++d) {
        if (sr.stat(t, d) == ObsStatus::Observed) ++observed_left;
      }
    }
  }
  while (static_cast<double>(n_mar) < target) {
    if (observed_left == 0) {
      throw_config("LevelUnreachable", "no observed cells left to remove");
    }
    const int s = uniform_int(rng, n);
    Series& sr = ds.series[s];
    const int d = uniform_int(rng, p);
    const int start = uniform_int(rng, sr.T());
    const int len = 1 + uniform_int(rng, 10);
    for (int t = start; t < std::min(start + len, sr.T()); ++t) {
      if (sr.stat(t, d) != ObsStatus::Observed) continue;
      truth.removed_cells.push_back(RemovedCell{s, t, d, sr.values(t, d), ObsStatus::MAR});
      sr.set_stat(t, d, ObsStatus::MAR);
      sr.values(t, d) = nan;
      ++n_mar;
      --observed_left;
    }
  }
}

void write_truth(const SimTruth& truth, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("FileOpenFailed", "cannot write " + path);
  os << "series,t,true_state\n";
  for (std::size_t s = 0; s < truth.z_true.size(); ++s) {
    const arma::ivec& z = truth.z_true[s];
    for (arma::uword t = 0; t < z.n_elem; ++t) {
      os << s << ',' << t << ',' << z(t) << '\n';
    }
  }
}

void write_removed(const SimTruth& truth, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("FileOpenFailed", "cannot write " + path);
  os << "series,t,dim,true_value,mechanism\n";
  for (const RemovedCell& c : truth.removed_cells) {
    os << c.series << ',' << c.t << ',' << (c.dim + 1) << ','
       << fmt_double(c.true_value) << ','
       << (c.mechanism == ObsStatus::MAR ? "mar" : "lod") << '\n';
  }
}

void write_truth_params(const SimTruth& truth, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw_io("FileOpenFailed", "cannot write " + path);
  os << "state,parameter,value\n";
  for (std::size_t k = 0; k < truth.mu_true.size(); ++k) {
    const arma::vec& mu = truth.mu_true[k];
    const arma::mat& sg = truth.sigma_true[k];
    for (arma::uword d = 0; d < mu.n_elem; ++d) {
      os << k << ",mu_" << (d + 1) << ',' << fmt_double(mu(d)) << '\n';
    }
    for (arma::uword a = 0; a < sg.n_rows; ++a) {
      for (arma::uword b = a; b < sg.n_cols; ++b) {
        os << k << ",sigma_" << (a + 1) << '_' << (b + 1) << ','
           << fmt_double(sg(a, b)) << '\n';
      }
    }
  }
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
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

long truth_long(const std::string& s, const std::string& where) {
  long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw_io("TruthParseFailed", "bad integer '" + s + "' in " + where);
  }
  return v;
}

double truth_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw_io("TruthParseFailed", "bad number '" + s + "' in " + where);
  }
  return v;
}

bool each_truth_row(const std::string& path, const std::string& header, bool required,
                    const std::function<void(const std::vector<std::string>&)>& row) {
  std::ifstream is(path);
  if (!is) {
    if (required) throw_io("FileOpenFailed", "cannot read " + path);
    return false;
  }
  std::string line;
  if (!std::getline(is, line) || line != header) {
    throw_io("TruthParseFailed", "unexpected header in " + path);
  }
  const std::size_t n_fields = split_fields(header).size();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != n_fields) throw_io("TruthParseFailed", "bad field count in " + path);
    row(f);
  }
  return true;
}

}  // namespace

SimTruth read_truth(const std::string& dir) {
  SimTruth truth;

  std::vector<std::vector<int>> z;
  each_truth_row(dir + "/truth.csv", "series,t,true_state", true,
                 [&](const std::vector<std::string>& f) {
                   const int s = static_cast<int>(truth_long(f[0], "truth.csv"));
                   const int t = static_cast<int>(truth_long(f[1], "truth.csv"));
                   if (static_cast<int>(z.size()) <= s) z.resize(s + 1);
                   if (static_cast<int>(z[s].size()) != t) {
                     throw_io("TruthParseFailed", "truth.csv rows out of order");
                   }
                   z[s].push_back(static_cast<int>(truth_long(f[2], "truth.csv")));
                 });
  truth.z_true.resize(z.size());
  for (std::size_t s = 0; s < z.size(); ++s) {
    truth.z_true[s] = arma::conv_to<arma::ivec>::from(z[s]);
  }

  each_truth_row(
      dir + "/truth_params.csv", "state,parameter,value", false,
      [&](const std::vector<std::string>& f) {
        const int k = static_cast<int>(truth_long(f[0], "truth_params.csv"));
        if (static_cast<int>(truth.mu_true.size()) <= k) {
          truth.mu_true.resize(k + 1);
          truth.sigma_true.resize(k + 1);
        }
        const std::string& name = f[1];
        const double v = truth_double(f[2], "truth_params.csv");
        if (name.rfind("mu_", 0) == 0) {
          const int d = static_cast<int>(truth_long(name.substr(3), "truth_params.csv")) - 1;
          if (static_cast<int>(truth.mu_true[k].n_elem) <= d) truth.mu_true[k].resize(d + 1);
          truth.mu_true[k](d) = v;
        } else if (name.rfind("sigma_", 0) == 0) {
          const std::size_t us = name.find('_', 6);
          if (us == std::string::npos) {
            throw_io("TruthParseFailed", "bad parameter name " + name);
          }
          const int a =
              static_cast<int>(truth_long(name.substr(6, us - 6), "truth_params.csv")) - 1;
          const int b = static_cast<int>(truth_long(name.substr(us + 1), "truth_params.csv")) - 1;
          arma::mat& sg = truth.sigma_true[k];
          const int need = std::max(a, b) + 1;
          if (static_cast<int>(sg.n_rows) < need) {
            const arma::mat old = sg;
            sg.zeros(need, need);
            if (old.n_rows > 0) sg.submat(0, 0, old.n_rows - 1, old.n_cols - 1) = old;
          }
          sg(a, b) = v;
          sg(b, a) = v;
        } else {
          throw_io("TruthParseFailed", "bad parameter name " + name);
        }
      });

  each_truth_row(dir + "/removed.csv", "series,t,dim,true_value,mechanism", false,
                 [&](const std::vector<std::string>& f) {
                   RemovedCell c;
                   c.series = static_cast<int>(truth_long(f[0], "removed.csv"));
                   c.t = static_cast<int>(truth_long(f[1], "removed.csv"));
                   c.dim = static_cast<int>(truth_long(f[2], "removed.csv")) - 1;
                   c.true_value = truth_double(f[3], "removed.csv");
                   if (f[4] == "mar") {
                     c.mechanism = ObsStatus::MAR;
                   } else if (f[4] == "lod") {
                     c.mechanism = ObsStatus::BelowLOD;
                   } else {
                     throw_io("TruthParseFailed", "bad mechanism '" + f[4] + "' in removed.csv");
                   }
                   truth.removed_cells.push_back(c);
                 });
  return truth;
}

}  // namespace ihmm
