#include "ihmm/transitions.hpp"

#include <cmath>

#include "ihmm/errors.hpp"

namespace ihmm {

namespace {

void check_index(const PsbpParams& p, int j, int k) {
  if (j < -1 || j >= p.K || k < 0 || k >= p.K) {
    throw_logic("IndexOutOfRange", "stick index (j=" + std::to_string(j) + ", k=" +
                std::to_string(k) + ") outside K=" + std::to_string(p.K));
  }
}

// Draw from N(mean, var) for a scalar full conditional.
double draw_normal(RngStream& rng, double mean, double var) {
  return rng.normal(mean, std::sqrt(var));
}

}  // namespace

PsbpParams PsbpParams::init_prior(int K0, int q, int n_subjects, bool subject_effects,
                                  bool shared_row, RngStream& rng) {
  PsbpParams p;
  p.q = q;
  p.n_subjects = n_subjects;
  p.subject_effects = subject_effects;
  p.shared_row = shared_row;
  p.sigma2_alpha = 1.0 / rng.gamma_rate(1.0, 1.0);
  p.m_alpha = rng.normal();
  p.v_alpha = 1.0 / rng.gamma_rate(1.0, 1.0);
  p.kappa2 = 1.0 / rng.gamma_rate(1.0, 1.0);
  p.alpha.set_size(0, 0);
  p.alpha_init.set_size(0);
  p.beta.set_size(0, q);
  p.gamma.set_size(0, q, n_subjects);
  for (int k = 0; k < K0; ++k) instantiate_state(p, rng);
  return p;
}

double PsbpParams::eta(int j, int k, int i, const arma::vec& x) const {
  check_index(*this, j, k);
  double e = (shared_row || j < 0) ? alpha_init(k) : alpha(j, k);
  if (q > 0) {
    e += arma::dot(x, beta.row(k));
    if (subject_effects) e += arma::dot(x, gamma.slice(i).row(k));
  }
  return e;
}

arma::mat PsbpParams::phi_matrix(int i, const arma::vec& x) const {
  arma::rowvec xb(K, arma::fill::zeros);
  if (q > 0) {
    xb = (beta * x).t();
    if (subject_effects) xb += (gamma.slice(i) * x).t();
  }
  arma::mat out(K + 1, K);
  out.row(0) = alpha_init.t() + xb;
  for (int j = 0; j < K; ++j) {
    if (shared_row) {
      out.row(j + 1) = out.row(0);
    } else {
      out.row(j + 1) = alpha.row(j) + xb;
    }
  }
  out.transform([](double e) { return norm_cdf(e); });
  return out;
}

double stick_probability(const PsbpParams& params, int j, int k, int i,
                         const arma::vec& x) {
  check_index(params, j, k);
  double prob = 1.0;
  for (int l = 0; l < k; ++l) prob *= 1.0 - norm_cdf(params.eta(j, l, i, x));
  return prob * norm_cdf(params.eta(j, k, i, x));
}

double tail_mass(const PsbpParams& params, int j, int i, const arma::vec& x,
                 int K_used) {
  double mass = 1.0;
  for (int l = 0; l < K_used; ++l) mass *= 1.0 - norm_cdf(params.eta(j, l, i, x));
  return mass;
}

void instantiate_state(PsbpParams& params, RngStream& rng) {
  const int K = params.K;
  const double s_off = std::sqrt(params.sigma2_alpha);
  if (!params.shared_row) {
    params.alpha.resize(K + 1, K + 1);
    for (int j = 0; j < K; ++j) params.alpha(j, K) = rng.normal(0.0, s_off);
    params.alpha_init.resize(K + 1);
    params.alpha_init(K) = rng.normal(0.0, s_off);
    for (int l = 0; l < K; ++l) params.alpha(K, l) = rng.normal(0.0, s_off);
    params.alpha(K, K) = rng.normal(params.m_alpha, std::sqrt(params.v_alpha));
  } else {
    params.alpha_init.resize(K + 1);
    params.alpha_init(K) = rng.normal(0.0, s_off);
  }
  params.beta.resize(K + 1, params.q);
  for (int c = 0; c < params.q; ++c) params.beta(K, c) = rng.normal();
  params.gamma.resize(K + 1, params.q, params.n_subjects);
  const double s_g = std::sqrt(params.kappa2);
  for (int i = 0; i < params.n_subjects; ++i) {
    for (int c = 0; c < params.q; ++c) {
      params.gamma(K, c, i) = params.subject_effects ? rng.normal(0.0, s_g) : 0.0;
    }
  }
  params.K = K + 1;
}

void remove_trailing_states(PsbpParams& params, int new_K) {
  if (new_K < 0 || new_K > params.K) {
    throw_logic("IndexOutOfRange", "cannot shrink to K=" + std::to_string(new_K));
  }
  if (new_K == params.K) return;
  if (!params.shared_row) params.alpha.resize(new_K, new_K);
  params.alpha_init.resize(new_K);
  params.beta.resize(new_K, params.q);
  params.gamma.resize(new_K, params.q, params.n_subjects);
  params.K = new_K;
}

void augment_and_update(PsbpParams& params, const std::vector<TransitionObs>& obs,
                        RngStream& rng, int absorbing_k) {
  const int K = params.K;
  const int q = params.q;
  const bool shared = params.shared_row;
  const int n_rows = shared ? 1 : K + 1;  // row 0 = initial row, row j+1 = state j

  auto row_of = [&](int j_prev) { return shared ? 0 : j_prev + 1; };
  auto alpha_at = [&](int row, int l) -> double& {
    return row == 0 ? params.alpha_init(l) : params.alpha(row - 1, l);
  };
  auto xg = [&](const TransitionObs& o, int l) {
    double v = 0.0;
    if (q > 0) {
      v = arma::dot(*o.x, params.beta.row(l));
      if (params.subject_effects) v += arma::dot(*o.x, params.gamma.slice(o.subject).row(l));
    }
    return v;
  };

  // Latent variables: one w per (transition, stick <= k_cur), positive at the
  // realized stick and nonpositive before it.  A transition into the
  // absorbing stick of a truncated model carries only the failures below it.
  std::vector<std::vector<double>> w(obs.size());
  for (std::size_t n = 0; n < obs.size(); ++n) {
    const TransitionObs& o = obs[n];
    if (o.k_cur < 0 || o.k_cur >= K) {
      throw_logic("IndexOutOfRange", "transition reaches uninstantiated state");
    }
    const int n_w = (o.k_cur == absorbing_k) ? o.k_cur : o.k_cur + 1;
    w[n].resize(n_w);
    const int row = row_of(o.j_prev);
    for (int l = 0; l < n_w; ++l) {
      const double e = alpha_at(row, l) + xg(o, l);
      w[n][l] = (l == o.k_cur) ? rtnorm_lower(rng, e, 1.0, 0.0)
                               : rtnorm_upper(rng, e, 1.0, 0.0);
    }
  }

  // alpha | w: scalar Gaussian conditionals per (row, stick).
  {
    arma::mat sum_r(n_rows, K, arma::fill::zeros);
    arma::imat cnt(n_rows, K, arma::fill::zeros);
    for (std::size_t n = 0; n < obs.size(); ++n) {
      const TransitionObs& o = obs[n];
      const int row = row_of(o.j_prev);
      for (int l = 0; l < static_cast<int>(w[n].size()); ++l) {
        double fixed = 0.0;
        if (q > 0) {
          fixed = arma::dot(*o.x, params.beta.row(l));
          if (params.subject_effects) {
            fixed += arma::dot(*o.x, params.gamma.slice(o.subject).row(l));
          }
        }
        sum_r(row, l) += w[n][l] - fixed;
        cnt(row, l) += 1;
      }
    }
    for (int row = 0; row < n_rows; ++row) {
      for (int l = 0; l < K; ++l) {
        const bool diag = !shared && row > 0 && (row - 1) == l;
        const double pm = diag ? params.m_alpha : 0.0;
        const double pv = diag ? params.v_alpha : params.sigma2_alpha;
        const double prec = 1.0 / pv + cnt(row, l);
        const double mean = (pm / pv + sum_r(row, l)) / prec;
        alpha_at(row, l) = draw_normal(rng, mean, 1.0 / prec);
      }
    }
  }

  // beta_l | w, alpha: q-dimensional Gaussian with N(0, I) prior.
  if (q > 0) {
    for (int l = 0; l < K; ++l) {
      arma::mat prec = arma::eye(q, q);
      arma::vec b(q, arma::fill::zeros);
      for (std::size_t n = 0; n < obs.size(); ++n) {
        const TransitionObs& o = obs[n];
        if (static_cast<int>(w[n].size()) <= l) continue;
        const arma::vec& x = *o.x;
        double r = w[n][l] - alpha_at(row_of(o.j_prev), l);
        if (params.subject_effects) {
          r -= arma::dot(x, params.gamma.slice(o.subject).row(l));
        }
        prec += x * x.t();
        b += r * x;
      }
      const arma::mat L = arma::chol(prec, "lower");
      const arma::vec mean = arma::solve(arma::trimatu(L.t()),
                                         arma::solve(arma::trimatl(L), b));
      arma::vec z(q);
      for (int c = 0; c < q; ++c) z(c) = rng.normal();
      params.beta.row(l) = (mean + arma::solve(arma::trimatu(L.t()), z)).t();
    }
  }

  // gamma_il | w, alpha, beta: N(0, kappa2 I) prior.
  if (q > 0 && params.subject_effects) {
    std::vector<std::vector<std::size_t>> by_subject(params.n_subjects);
    for (std::size_t n = 0; n < obs.size(); ++n) {
      by_subject[obs[n].subject].push_back(n);
    }
    for (int i = 0; i < params.n_subjects; ++i) {
      for (int l = 0; l < K; ++l) {
        arma::mat prec = arma::eye(q, q) / params.kappa2;
        arma::vec b(q, arma::fill::zeros);
        for (std::size_t n : by_subject[i]) {
          const TransitionObs& o = obs[n];
          if (static_cast<int>(w[n].size()) <= l) continue;
          const arma::vec& x = *o.x;
          const double r = w[n][l] - alpha_at(row_of(o.j_prev), l) -
                           arma::dot(x, params.beta.row(l));
          prec += x * x.t();
          b += r * x;
        }
        const arma::mat L = arma::chol(prec, "lower");
        const arma::vec mean = arma::solve(arma::trimatu(L.t()),
                                           arma::solve(arma::trimatl(L), b));
        arma::vec z(q);
        for (int c = 0; c < q; ++c) z(c) = rng.normal();
        params.gamma.slice(i).row(l) = (mean + arma::solve(arma::trimatu(L.t()), z)).t();
      }
    }
  }

  // Hyperparameters, in fixed order: sigma2_alpha, m_alpha, v_alpha, kappa2.
  {
    double ss_off = 0.0;
    int n_off = 0;
    for (int l = 0; l < K; ++l) {
      ss_off += params.alpha_init(l) * params.alpha_init(l);
      ++n_off;
    }
    if (!shared) {
      for (int j = 0; j < K; ++j) {
        for (int l = 0; l < K; ++l) {
          if (j == l) continue;
          ss_off += params.alpha(j, l) * params.alpha(j, l);
          ++n_off;
        }
      }
    }
    params.sigma2_alpha = 1.0 / rng.gamma_rate(1.0 + 0.5 * n_off, 1.0 + 0.5 * ss_off);

    double sum_diag = 0.0;
    const int n_diag = shared ? 0 : K;
    for (int j = 0; j < n_diag; ++j) sum_diag += params.alpha(j, j);
    const double post_var = 1.0 / (1.0 + n_diag / params.v_alpha);
    params.m_alpha = draw_normal(rng, post_var * sum_diag / params.v_alpha, post_var);
    double ss_diag = 0.0;
    for (int j = 0; j < n_diag; ++j) {
      const double d = params.alpha(j, j) - params.m_alpha;
      ss_diag += d * d;
    }
    params.v_alpha = 1.0 / rng.gamma_rate(1.0 + 0.5 * n_diag, 1.0 + 0.5 * ss_diag);

    double ss_g = 0.0;
    int n_g = 0;
    if (params.subject_effects) {
      ss_g = arma::accu(arma::square(params.gamma));
      n_g = params.n_subjects * K * q;
    }
    params.kappa2 = 1.0 / rng.gamma_rate(1.0 + 0.5 * n_g, 1.0 + 0.5 * ss_g);
  }
}

}  // namespace ihmm
