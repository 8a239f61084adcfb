#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "ihmm/errors.hpp"
#include "ihmm/evaluation.hpp"
#include "ihmm/rng.hpp"
#include "test_util.hpp"

using namespace ihmm;

namespace {

std::vector<int> random_partition(RngStream& rng, int n, int max_labels) {
  std::vector<int> z(n);
  for (int i = 0; i < n; ++i) z[i] = static_cast<int>(rng.u01() * max_labels) % max_labels;
  return z;
}

// Exhaustive max-overlap: permute a padded square label set and keep the best
// injective restriction.  Only viable for a handful of labels.
double brute_force_hamming(const std::vector<int>& est, const std::vector<int>& tru) {
  std::vector<int> ea, ta;
  std::vector<int> e(est.size()), t(tru.size());
  {
    std::map<int, int> m;
    for (std::size_t i = 0; i < est.size(); ++i) {
      auto it = m.emplace(est[i], static_cast<int>(m.size())).first;
      e[i] = it->second;
    }
    ea.resize(m.size());
  }
  {
    std::map<int, int> m;
    for (std::size_t i = 0; i < tru.size(); ++i) {
      auto it = m.emplace(tru[i], static_cast<int>(m.size())).first;
      t[i] = it->second;
    }
    ta.resize(m.size());
  }
  const int na = static_cast<int>(ea.size());
  const int nb = static_cast<int>(ta.size());
  const int n = std::max(na, nb);
  arma::mat c(na, nb, arma::fill::zeros);
  for (std::size_t i = 0; i < e.size(); ++i) c(e[i], t[i]) += 1.0;

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double overlap = 0.0;
    for (int i = 0; i < na; ++i)
      if (perm[i] < nb) overlap += c(i, perm[i]);
    best = std::max(best, overlap);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return 1.0 - best / static_cast<double>(est.size());
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

PosteriorDraws make_draws(const std::vector<std::vector<std::vector<int>>>& z,
                          const std::vector<std::vector<EmissionParams>>& emissions) {
  PosteriorDraws d;
  for (std::size_t r = 0; r < z.size(); ++r) {
    d.iterations.push_back(static_cast<int>(r + 1));
    int mx = 0;
    std::vector<int> seen;
    for (const auto& zs : z[r])
      for (int k : zs) {
        mx = std::max(mx, k + 1);
        if (std::find(seen.begin(), seen.end(), k) == seen.end()) seen.push_back(k);
      }
    d.k_occupied.push_back(static_cast<int>(seen.size()));
    d.k_instantiated.push_back(mx);
    d.loglik.push_back(0.0);
  }
  d.z = z;
  d.emission_draws = emissions;
  d.n_series = z.empty() ? 0 : static_cast<int>(z[0].size());
  return d;
}

}  // namespace

TEST_CASE("misclassification rate handles label permutations and extra states") {
  CHECK(hamming_distance({1, 1, 2, 2}, {2, 2, 1, 1}) == doctest::Approx(0.0));
  CHECK(hamming_distance({1, 1, 2, 2, 3, 3}, {1, 1, 1, 2, 2, 2}) == doctest::Approx(1.0 / 3.0));
  CHECK(hamming_distance({1, 1, 1, 2, 2, 2}, {1, 1, 2, 2, 3, 3}) == doctest::Approx(1.0 / 3.0));
  CHECK(hamming_distance({5, 5, 5}, {9, 9, 9}) == doctest::Approx(0.0));
  CHECK(hamming_distance({1, 2, 3, 4}, {7, 7, 7, 7}) == doctest::Approx(0.75));

  CHECK_THROWS_AS(hamming_distance({1, 2}, {1}), Error);
  try {
    hamming_distance({}, {});
  } catch (const Error& e) {
    CHECK(e.code == "LengthMismatch");
  }
}

TEST_CASE("assignment-based rate matches exhaustive search on small label sets") {
  RngStream rng = RngStream::derive(311, 0);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 8 + static_cast<int>(rng.u01() * 25);
    const int la = 1 + static_cast<int>(rng.u01() * 6);
    const int lb = 1 + static_cast<int>(rng.u01() * 6);
    const std::vector<int> a = random_partition(rng, n, la);
    const std::vector<int> b = random_partition(rng, n, lb);
    CHECK(hamming_distance(a, b) == doctest::Approx(brute_force_hamming(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("misclassification rate is symmetric and relabeling-invariant") {
  RngStream rng = RngStream::derive(312, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const int n = 20 + static_cast<int>(rng.u01() * 30);
    std::vector<int> a = random_partition(rng, n, 5);
    std::vector<int> b = random_partition(rng, n, 4);
    const double h = hamming_distance(a, b);
    CHECK(hamming_distance(b, a) == doctest::Approx(h).epsilon(1e-14));

    // Arbitrary injective relabeling of either argument changes nothing.
    std::vector<int> a2(a), b2(b);
    for (int& v : a2) v = 17 - 3 * v;
    for (int& v : b2) v = 100 + 7 * v;
    CHECK(hamming_distance(a2, b) == doctest::Approx(h).epsilon(1e-14));
    CHECK(hamming_distance(a, b2) == doctest::Approx(h).epsilon(1e-14));
  }
}

TEST_CASE("variation of information satisfies the metric axioms") {
  RngStream rng = RngStream::derive(313, 0);
  for (int rep = 0; rep < 60; ++rep) {
    const int n = 15 + static_cast<int>(rng.u01() * 40);
    const std::vector<int> a = random_partition(rng, n, 4);
    const std::vector<int> b = random_partition(rng, n, 5);
    const std::vector<int> c = random_partition(rng, n, 3);

    CHECK(variation_of_information(a, a) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::abs(variation_of_information(a, b) - variation_of_information(b, a)) < 1e-12);
    CHECK(variation_of_information(a, c) <=
          variation_of_information(a, b) + variation_of_information(b, c) + 1e-12);
    CHECK(variation_of_information(a, b) >= 0.0);
  }

  // Two independent-looking blocks: VI of a refinement is the split entropy.
  const std::vector<int> coarse = {0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> fine = {0, 0, 1, 1, 2, 2, 3, 3};
  CHECK(variation_of_information(coarse, fine) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("mean number of occupied states averages the retained draws") {
  PosteriorDraws d;
  d.iterations = {1, 2, 3};
  d.k_occupied = {2, 2, 2};
  CHECK(k_hat(d) == doctest::Approx(2.0));

  d.iterations = {1, 2};
  d.k_occupied = {2, 4};
  CHECK(k_hat(d) == doctest::Approx(3.0));

  PosteriorDraws empty;
  CHECK_THROWS_AS(k_hat(empty), Error);
  try {
    k_hat(empty);
  } catch (const Error& e) {
    CHECK(e.code == "NoDraws");
  }
}

TEST_CASE("state-mean error uses the overlap-optimal relabeling per draw") {
  SimTruth truth;
  truth.z_true = {arma::ivec{0, 0, 0, 1, 1, 1}};
  truth.mu_true = {arma::vec{1.0, 2.0, 3.0}, arma::vec{-1.0, 0.5, 2.0}};
  truth.sigma_true = {arma::eye(3, 3), arma::eye(3, 3)};

  SUBCASE("matched states contribute per-dimension squared error") {
    // Estimated labels swapped relative to the truth; relabeling must undo it.
    std::vector<std::vector<EmissionParams>> em(1);
    em[0].resize(2);
    em[0][0].mu = truth.mu_true[1] + 0.1;
    em[0][1].mu = truth.mu_true[0] + 0.1;
    const PosteriorDraws d = make_draws({{{1, 1, 1, 0, 0, 0}}}, em);
    CHECK(mu_mse(d, truth) == doctest::Approx(0.01).epsilon(1e-12));
  }

  SUBCASE("true states with no estimated counterpart contribute their squared norm") {
    std::vector<std::vector<EmissionParams>> em(1);
    em[0].resize(1);
    em[0][0].mu = truth.mu_true[0];  // exact on the matched state
    const PosteriorDraws d = make_draws({{{0, 0, 0, 0, 0, 0}}}, em);
    const double unmatched = arma::accu(arma::square(truth.mu_true[1])) / 3.0;
    CHECK(mu_mse(d, truth) == doctest::Approx(unmatched / 2.0).epsilon(1e-12));
  }

  SUBCASE("draws average") {
    std::vector<std::vector<EmissionParams>> em(2);
    em[0].resize(2);
    em[0][0].mu = truth.mu_true[0];
    em[0][1].mu = truth.mu_true[1];
    em[1].resize(2);
    em[1][0].mu = truth.mu_true[0] + 0.2;
    em[1][1].mu = truth.mu_true[1];
    const PosteriorDraws d =
        make_draws({{{0, 0, 0, 1, 1, 1}}, {{0, 0, 0, 1, 1, 1}}}, em);
    // First draw exact, second off by 0.2 in each dimension of state 0 only.
    CHECK(mu_mse(d, truth) == doctest::Approx((0.0 + 0.04 / 2.0) / 2.0).epsilon(1e-12));
  }

  PosteriorDraws empty;
  CHECK_THROWS_AS(mu_mse(empty, truth), Error);
}

TEST_CASE("imputation accuracy splits by missingness mechanism") {
  std::vector<RemovedCell> removed;
  removed.push_back({0, 0, 0, 1.0, ObsStatus::MAR});
  removed.push_back({0, 1, 1, -2.0, ObsStatus::MAR});
  removed.push_back({0, 2, 0, 0.5, ObsStatus::BelowLOD});

  std::vector<ImputationRecord> records(3);
  for (int r = 0; r < 3; ++r) {
    records[r].draw_index = r + 1;
    records[r].cells = {{0, 0, 0, ObsStatus::MAR},
                        {0, 1, 1, ObsStatus::MAR},
                        {0, 2, 0, ObsStatus::BelowLOD}};
    records[r].values = {1.5, -1.5, 0.5 - 0.2};
  }

  SUBCASE("constant error maps to its square and itself") {
    const ImpError mar = imputation_error(records, removed, ObsStatus::MAR);
    CHECK(mar.mse == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(mar.bias == doctest::Approx(0.5).epsilon(1e-12));
    const ImpError lod = imputation_error(records, removed, ObsStatus::BelowLOD);
    CHECK(lod.mse == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(lod.bias == doctest::Approx(-0.2).epsilon(1e-12));
  }

  SUBCASE("mixed errors average over cells and draws") {
    records[1].values[0] = 0.0;  // error -1 on one draw of one MAR cell
    const ImpError mar = imputation_error(records, removed, ObsStatus::MAR);
    CHECK(mar.mse == doctest::Approx((5 * 0.25 + 1.0) / 6.0).epsilon(1e-12));
    CHECK(mar.bias == doctest::Approx((5 * 0.5 - 1.0) / 6.0).epsilon(1e-12));
  }

  SUBCASE("absent mechanism raises NoCells") {
    std::vector<RemovedCell> mar_only(removed.begin(), removed.begin() + 2);
    CHECK_THROWS_AS(imputation_error(records, mar_only, ObsStatus::BelowLOD), Error);
    try {
      imputation_error(records, mar_only, ObsStatus::BelowLOD);
    } catch (const Error& e) {
      CHECK(e.code == "NoCells");
    }
  }
}

TEST_CASE("point estimate picks the draw closest to the rest in partition space") {
  const std::vector<std::vector<int>> part_a = {{0, 0, 1, 1, 1, 0}};
  const std::vector<std::vector<int>> part_b = {{0, 1, 0, 1, 0, 1}};

  std::vector<std::vector<std::vector<int>>> z = {part_a, part_a, part_b, part_a, part_b};
  std::vector<std::vector<EmissionParams>> em(z.size());
  const PosteriorDraws d = make_draws(z, em);

  const PointPartition pp = point_estimate_partition(d);
  CHECK(pp.record_index == 0);
  CHECK(pp.z == part_a);
  const double v = variation_of_information(part_a[0], part_b[0]);
  CHECK(pp.avg_vi == doctest::Approx(2.0 * v / 4.0).epsilon(1e-12));

  SUBCASE("subsampling restricts the candidate set deterministically") {
    // Indices 0, 1, 3 are kept: all copies of the first partition, so the
    // average pairwise distance collapses to zero.
    const PointPartition sub = point_estimate_partition(d, 3);
    CHECK(sub.record_index == 0);
    CHECK(sub.avg_vi == doctest::Approx(0.0));
  }

  SUBCASE("ties break toward the earliest retained draw") {
    const PosteriorDraws two = make_draws({part_a, part_b}, {{}, {}});
    CHECK(point_estimate_partition(two).record_index == 0);
  }

  PosteriorDraws single = make_draws({part_a}, {{}});
  CHECK_THROWS_AS(point_estimate_partition(single), Error);
}

TEST_CASE("state by microenvironment table counts every time point once") {
  arma::mat y(4, 1, arma::fill::zeros);
  Dataset ds = test_util::make_dataset({y, y});
  ds.series[0].microenv = {"home", "work", "work", "transit"};
  ds.series[1].microenv = {"home", "home", "work", "work"};

  const std::vector<std::vector<int>> z = {{0, 1, 1, 0}, {0, 0, 2, 1}};
  const Crosstab tab = microenv_crosstab(z, ds);

  REQUIRE(tab.env_labels == std::vector<std::string>{"home", "transit", "work"});
  REQUIRE(tab.counts.n_rows == 3);
  CHECK(tab.counts(0, 0) == 3);  // state 0 at home
  CHECK(tab.counts(0, 1) == 1);
  CHECK(tab.counts(0, 2) == 0);
  CHECK(tab.counts(1, 0) == 0);
  CHECK(tab.counts(1, 2) == 3);
  CHECK(tab.counts(2, 2) == 1);
  CHECK(arma::accu(tab.counts) == 8);

  SUBCASE("permuting state labels permutes rows only") {
    std::vector<std::vector<int>> zp = z;
    for (auto& zs : zp)
      for (int& k : zs) k = 2 - k;
    const Crosstab tp = microenv_crosstab(zp, ds);
    for (int k = 0; k < 3; ++k)
      CHECK(arma::all(tp.counts.row(2 - k) == tab.counts.row(k)));
  }

  SUBCASE("missing labels raise NoLabels") {
    Dataset bare = test_util::make_dataset({y, y});
    CHECK_THROWS_AS(microenv_crosstab(z, bare), Error);
    try {
      microenv_crosstab(z, bare);
    } catch (const Error& e) {
      CHECK(e.code == "NoLabels");
    }
  }
}

TEST_CASE("independent-fit aggregation sums states and averages error rates") {
  CHECK(aggregate_k_hat({2.0, 3.5, 1.5}) == doctest::Approx(7.0));
  CHECK(aggregate_hamming({0.1, 0.2, 0.3}) == doctest::Approx(0.2));
  CHECK_THROWS_AS(aggregate_k_hat({}), Error);
}

TEST_CASE("report writers emit stable csv") {
  const std::string dir = "eval_out_test";
  std::filesystem::remove_all(dir);

  MetricReport rep;
  rep.k_hat = 2.5;
  rep.hamming = 0.125;
  rep.mar_mse = 0.07;
  rep.mar_bias = -0.01;
  write_metrics(rep, dir + "/metrics.csv");
  CHECK(slurp(dir + "/metrics.csv") ==
        "k_hat,hamming,mu_mse,mar_mse,mar_bias,lod_mse,lod_bias\n"
        "2.5,0.125,,0.07,-0.01,,\n");

  write_metrics(std::vector<MetricReport>{rep, rep}, dir + "/reps.csv");
  const std::string reps = slurp(dir + "/reps.csv");
  CHECK(reps.substr(0, 10) == "replicate,");
  CHECK(std::count(reps.begin(), reps.end(), '\n') == 3);

  Crosstab tab;
  tab.env_labels = {"home", "work"};
  tab.counts = {{3, 1}, {0, 4}};
  write_crosstab(tab, dir + "/crosstab.csv");
  CHECK(slurp(dir + "/crosstab.csv") ==
        "state,home,work,total\n"
        "0,3,1,4\n"
        "1,0,4,4\n"
        "total,3,5,8\n");

  PointPartition pp;
  pp.z = {{0, 1}, {2}};
  write_point_partition(pp, dir + "/point_partition.csv");
  CHECK(slurp(dir + "/point_partition.csv") ==
        "series,t,state\n"
        "0,0,0\n"
        "0,1,1\n"
        "1,0,2\n");

  std::filesystem::remove_all(dir);
}
