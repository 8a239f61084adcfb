#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "ihmm/data.hpp"
#include "ihmm/errors.hpp"
#include "ihmm/simulation.hpp"

using namespace ihmm;

namespace {

SimConfig small_config() {
  SimConfig cfg;
  cfg.n_series = 4;
  cfg.T = 120;
  cfg.p = 3;
  cfg.K_true = 8;
  cfg.seed = 42;
  return cfg;
}

// Distinct visited states in order of appearance, collapsing runs.
std::vector<int> run_sequence(const arma::ivec& z) {
  std::vector<int> seq;
  for (arma::uword t = 0; t < z.n_elem; ++t) {
    if (seq.empty() || seq.back() != z(t)) seq.push_back(static_cast<int>(z(t)));
  }
  return seq;
}

}  // namespace

TEST_CASE("generation is reproducible bit for bit") {
  SimConfig cfg = small_config();
  cfg.missing_level = 0.10;
  auto [ds1, tr1] = generate(cfg);
  auto [ds2, tr2] = generate(cfg);

  REQUIRE(ds1.series.size() == ds2.series.size());
  for (std::size_t s = 0; s < ds1.series.size(); ++s) {
    const Series& a = ds1.series[s];
    const Series& b = ds2.series[s];
    CHECK(a.subject_id == b.subject_id);
    for (int t = 0; t < a.T(); ++t) {
      for (int d = 0; d < a.p(); ++d) {
        CHECK(a.status(t, d) == b.status(t, d));
        if (a.stat(t, d) == ObsStatus::Observed) {
          CHECK(a.values(t, d) == b.values(t, d));
        }
      }
    }
    CHECK(arma::all(tr1.z_true[s] == tr2.z_true[s]));
  }
  CHECK(arma::approx_equal(ds1.lod, ds2.lod, "absdiff", 0.0));
  REQUIRE(tr1.removed_cells.size() == tr2.removed_cells.size());
  for (std::size_t i = 0; i < tr1.removed_cells.size(); ++i) {
    CHECK(tr1.removed_cells[i].true_value == tr2.removed_cells[i].true_value);
    CHECK(tr1.removed_cells[i].series == tr2.removed_cells[i].series);
  }
  for (std::size_t k = 0; k < tr1.mu_true.size(); ++k) {
    CHECK(arma::approx_equal(tr1.mu_true[k], tr2.mu_true[k], "absdiff", 0.0));
  }
}

TEST_CASE("shared scenario orders blocks ascending with a wrapped start") {
  SimConfig cfg = small_config();
  cfg.n_series = 6;
  for (std::uint64_t seed : {7u, 19u, 23u}) {
    cfg.seed = seed;
    auto [ds, truth] = generate(cfg);
    for (const arma::ivec& z : truth.z_true) {
      const std::vector<int> seq = run_sequence(z);
      REQUIRE(seq.size() >= 2);
      // First and last runs are the same state, wrapped around the series.
      CHECK(seq.front() == seq.back());
      // Everything between the wrapped ends ascends.
      for (std::size_t i = 1; i + 2 < seq.size(); ++i) CHECK(seq[i] < seq[i + 1]);
      // The wrap means the first state is the smallest visited one.
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) CHECK(seq.front() <= seq[i]);
    }
  }
}

TEST_CASE("distinct scenario preserves the start-equals-end property") {
  SimConfig cfg = small_config();
  cfg.scenario = Scenario::Distinct;
  cfg.n_series = 8;
  cfg.seed = 13;
  auto [ds, truth] = generate(cfg);
  bool any_nonascending = false;
  for (const arma::ivec& z : truth.z_true) {
    const std::vector<int> seq = run_sequence(z);
    CHECK(seq.front() == seq.back());
    for (std::size_t i = 1; i + 2 < seq.size(); ++i) {
      if (seq[i] > seq[i + 1]) any_nonascending = true;
    }
  }
  // With eight series of several states each, at least one permutation must
  // break the ascending order.
  CHECK(any_nonascending);
}

TEST_CASE("visit frequencies decline like the configured weights") {
  SimConfig cfg;
  cfg.n_series = 5;
  cfg.T = 100;
  cfg.p = 2;
  cfg.K_true = 6;
  arma::vec freq(6, arma::fill::zeros);
  int missing_somewhere = 0;
  const int reps = 80;
  for (int r = 0; r < reps; ++r) {
    cfg.seed = 1000 + r;
    auto [ds, truth] = generate(cfg);
    for (const arma::ivec& z : truth.z_true) {
      std::set<int> seen;
      for (arma::uword t = 0; t < z.n_elem; ++t) {
        freq(z(t)) += 1.0;
        seen.insert(static_cast<int>(z(t)));
      }
      if (static_cast<int>(seen.size()) < 6) ++missing_somewhere;
    }
  }
  freq /= arma::accu(freq);
  // Oracle: mean weight of state k is (K - k) / (K (K+1) / 2) = (6-k)/21.
  for (int k = 0; k < 6; ++k) {
    CHECK(freq(k) == doctest::Approx((6.0 - k) / 21.0).epsilon(0.12));
  }
  for (int k = 0; k + 1 < 6; ++k) CHECK(freq(k) > freq(k + 1));
  CHECK(missing_somewhere > 0);
}

TEST_CASE("standardization holds over observed plus hidden values") {
  SimConfig cfg = small_config();
  cfg.missing_level = 0.20;
  cfg.seed = 77;
  auto [ds, truth] = generate(cfg);

  for (int d = 0; d < cfg.p; ++d) {
    std::vector<double> all;
    for (const Series& sr : ds.series) {
      for (int t = 0; t < sr.T(); ++t) {
        if (sr.stat(t, d) == ObsStatus::Observed) all.push_back(sr.values(t, d));
      }
    }
    for (const RemovedCell& c : truth.removed_cells) {
      if (c.dim == d) all.push_back(c.true_value);
    }
    REQUIRE(all.size() == static_cast<std::size_t>(cfg.n_series * cfg.T));
    double m = 0.0;
    for (double v : all) m += v;
    m /= all.size();
    double v2 = 0.0;
    for (double v : all) v2 += (v - m) * (v - m);
    v2 /= all.size();
    CHECK(std::fabs(m) < 1e-10);
    CHECK(std::fabs(v2 - 1.0) < 1e-10);
  }
}

TEST_CASE("zero level leaves the dataset untouched") {
  SimConfig cfg = small_config();
  auto [ds, truth] = generate(cfg);
  CHECK(truth.removed_cells.empty());
  for (const Series& sr : ds.series) {
    CHECK(arma::all(arma::vectorise(sr.status) == 0));
    CHECK(sr.values.is_finite());
  }

  Dataset copy = ds;
  SimTruth tcopy = truth;
  RngStream r = RngStream::derive(5, 1, 0, 0);
  inject_missing(copy, tcopy, 0.0, r);
  CHECK(tcopy.removed_cells.empty());
  for (std::size_t s = 0; s < ds.series.size(); ++s) {
    CHECK(arma::approx_equal(copy.series[s].values, ds.series[s].values, "absdiff", 0.0));
  }
}

TEST_CASE("ten percent missing splits evenly between mechanisms") {
  SimConfig cfg = small_config();
  cfg.n_series = 6;
  cfg.T = 200;
  cfg.missing_level = 0.10;
  cfg.seed = 3;
  auto [ds, truth] = generate(cfg);

  const double total = 6.0 * 200.0 * 3.0;
  double n_mar = 0, n_lod = 0;
  for (const RemovedCell& c : truth.removed_cells) {
    (c.mechanism == ObsStatus::MAR ? n_mar : n_lod) += 1;
  }
  CHECK(n_mar / total == doctest::Approx(0.05).epsilon(0.1));
  CHECK(n_lod / total == doctest::Approx(0.05).epsilon(0.1));

  // Statuses in the dataset agree with the removal list.
  double marked = 0;
  for (const Series& sr : ds.series) {
    for (int t = 0; t < sr.T(); ++t) {
      for (int d = 0; d < 3; ++d) {
        if (sr.stat(t, d) != ObsStatus::Observed) {
          marked += 1;
          CHECK(std::isnan(sr.values(t, d)));
        }
      }
    }
  }
  CHECK(marked == n_mar + n_lod);
}

TEST_CASE("detection limits separate removed and retained values") {
  SimConfig cfg = small_config();
  cfg.missing_level = 0.20;
  cfg.seed = 9;
  auto [ds, truth] = generate(cfg);

  for (const RemovedCell& c : truth.removed_cells) {
    CHECK(std::isfinite(c.true_value));
    if (c.mechanism == ObsStatus::BelowLOD) {
      CHECK(c.true_value < ds.lod(c.dim));
    }
  }
  for (const Series& sr : ds.series) {
    for (int t = 0; t < sr.T(); ++t) {
      for (int d = 0; d < 3; ++d) {
        if (sr.stat(t, d) == ObsStatus::Observed) {
          CHECK(sr.values(t, d) > ds.lod(d));
        }
      }
    }
  }
}

TEST_CASE("generated data round-trips through the csv format") {
  SimConfig cfg = small_config();
  cfg.missing_level = 0.10;
  cfg.seed = 21;
  auto [ds, truth] = generate(cfg);

  const std::string path = "sim_roundtrip.csv";
  emit_csv(ds, path);
  CovariateSpec spec;
  Dataset back = ingest_csv(path, spec, ds.lod);
  REQUIRE(back.series.size() == ds.series.size());
  for (std::size_t s = 0; s < ds.series.size(); ++s) {
    for (int t = 0; t < ds.series[s].T(); ++t) {
      for (int d = 0; d < 3; ++d) {
        CHECK(back.series[s].status(t, d) == ds.series[s].status(t, d));
        if (ds.series[s].stat(t, d) == ObsStatus::Observed) {
          CHECK(back.series[s].values(t, d) == ds.series[s].values(t, d));
        }
      }
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("emission parameters are valid and share the leading scale") {
  SimConfig cfg = small_config();
  cfg.seed = 31;
  auto [ds, truth] = generate(cfg);
  REQUIRE(truth.sigma_true.size() == 8);
  // The first diagonal entry is the same for every state: the construction
  // fixes it before standardization, which rescales all states alike.
  const double s00 = truth.sigma_true[0](0, 0);
  for (const arma::mat& sig : truth.sigma_true) {
    CHECK(sig.is_sympd());
    CHECK(sig(0, 0) == doctest::Approx(s00).epsilon(1e-12));
  }
}

TEST_CASE("truth files carry the labels and removals") {
  SimConfig cfg = small_config();
  cfg.n_series = 2;
  cfg.T = 50;
  cfg.missing_level = 0.10;
  cfg.seed = 15;
  auto [ds, truth] = generate(cfg);

  write_truth(truth, "truth_test.csv");
  write_removed(truth, "removed_test.csv");

  std::ifstream ti("truth_test.csv");
  std::string line;
  std::getline(ti, line);
  CHECK(line == "series,t,true_state");
  int rows = 0;
  while (std::getline(ti, line)) ++rows;
  CHECK(rows == 100);

  std::ifstream ri("removed_test.csv");
  std::getline(ri, line);
  CHECK(line == "series,t,dim,true_value,mechanism");
  rows = 0;
  int mar_rows = 0;
  while (std::getline(ri, line)) {
    ++rows;
    if (line.find(",mar") != std::string::npos) ++mar_rows;
  }
  CHECK(rows == static_cast<int>(truth.removed_cells.size()));
  CHECK(mar_rows > 0);
  CHECK(mar_rows < rows);

  std::remove("truth_test.csv");
  std::remove("removed_test.csv");
}

TEST_CASE("bad levels are rejected") {
  SimConfig cfg = small_config();
  cfg.missing_level = 0.5;
  try {
    generate(cfg);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code == "LevelUnreachable");
  }
}
