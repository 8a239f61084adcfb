// Command-line front end: simulate / fit / evaluate / summarize.
//
// Exit codes: 0 success, 2 configuration error (including flag parsing),
// 3 I/O error, 4 numerical or internal failure (with a diagnostic dump in
// the output directory when one is known).  IHMM_LOG in {silent, info,
// debug} controls stderr verbosity; every command leaves a manifest.json
// in its output directory.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <armadillo>

#include "CLI11.hpp"
#include "json.hpp"

#include "ihmm/baselines.hpp"
#include "ihmm/data.hpp"
#include "ihmm/emissions.hpp"
#include "ihmm/errors.hpp"
#include "ihmm/evaluation.hpp"
#include "ihmm/imputation.hpp"
#include "ihmm/manifest.hpp"
#include "ihmm/rng.hpp"
#include "ihmm/sampler.hpp"
#include "ihmm/simulation.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int log_level() {
  static const int lvl = [] {
    const char* env = std::getenv("IHMM_LOG");
    if (env == nullptr) return 1;
    const std::string s(env);
    if (s == "silent") return 0;
    if (s == "debug") return 2;
    return 1;
  }();
  return lvl;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[ihmm] " << msg << std::endl;
}

void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << "[ihmm] " << msg << std::endl;
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) s += ' ';
    s += argv[i];
  }
  return s;
}

// --- json config helpers ---------------------------------------------------

json load_json(const std::string& path, const std::set<std::string>& allowed) {
  std::ifstream in(path);
  if (!in) ihmm::throw_io("ConfigOpenFailed", "cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    ihmm::throw_config("ConfigParseFailed", std::string(e.what()));
  }
  if (!j.is_object()) ihmm::throw_config("ConfigParseFailed", "top level must be an object");
  for (const auto& item : j.items()) {
    if (allowed.count(item.key()) == 0) {
      ihmm::throw_config("UnknownConfigKey", "unrecognized key '" + item.key() + "'");
    }
  }
  return j;
}

template <typename T>
T json_get(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const std::exception&) {
    ihmm::throw_config("BadConfigValue", std::string("key '") + key + "' has the wrong type");
  }
}

// --- small csv artifacts ---------------------------------------------------

std::ofstream open_out(const std::string& path) {
  fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream os(path);
  if (!os) ihmm::throw_io("FileOpenFailed", "cannot open " + path + " for writing");
  return os;
}

void write_lod_csv(const arma::vec& lod, const std::string& path) {
  std::ofstream os = open_out(path);
  os << "dim,threshold\n";
  for (arma::uword d = 0; d < lod.n_elem; ++d) {
    os << (d + 1) << ',' << ihmm::fmt_double(lod(d)) << '\n';
  }
}

arma::vec read_lod_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) ihmm::throw_io("LodOpenFailed", "cannot open lod file " + path);
  std::string line;
  if (!std::getline(in, line) || line != "dim,threshold") {
    ihmm::throw_io("LodParseFailed", "expected header dim,threshold in " + path);
  }
  std::vector<double> vals;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) ihmm::throw_io("LodParseFailed", "bad row: " + line);
    const long dim = std::strtol(line.substr(0, comma).c_str(), nullptr, 10);
    if (dim != static_cast<long>(vals.size()) + 1) {
      ihmm::throw_io("LodParseFailed", "dimensions must be contiguous from 1");
    }
    vals.push_back(ihmm::parse_double(line.substr(comma + 1), "lod threshold"));
  }
  if (vals.empty()) ihmm::throw_io("LodParseFailed", "no thresholds in " + path);
  return arma::vec(vals);
}

// Number of value_ columns in the dataset header, so a fit without --lod can
// size the unbounded detection vector.
int peek_dimension(const std::string& data_path) {
  std::ifstream in(data_path);
  if (!in) ihmm::throw_io("DataOpenFailed", "cannot open data file " + data_path);
  std::string header;
  if (!std::getline(in, header)) ihmm::throw_io("DataParseFailed", "empty data file");
  int p = 0;
  std::stringstream ss(header);
  std::string field;
  while (std::getline(ss, field, ',')) {
    if (field.rfind("value_", 0) == 0) ++p;
  }
  if (p == 0) ihmm::throw_io("DataParseFailed", "no value_ columns in header");
  return p;
}

void write_standardization(const ihmm::AffineTransform& tr, const std::string& path) {
  std::ofstream os = open_out(path);
  os << "dim,shift,scale\n";
  for (arma::uword d = 0; d < tr.shift.n_elem; ++d) {
    os << (d + 1) << ',' << ihmm::fmt_double(tr.shift(d)) << ','
       << ihmm::fmt_double(tr.scale(d)) << '\n';
  }
}

void write_imputation_summary(const ihmm::CollectedImputations& col, const std::string& path) {
  std::ofstream os = open_out(path);
  os << "series,t,dim,status,mean,lo95,hi95\n";
  for (const ihmm::ImputationSummaryRow& row : col.summary) {
    os << row.cell.series << ',' << row.cell.t << ',' << (row.cell.dim + 1) << ','
       << (row.cell.status == ihmm::ObsStatus::BelowLOD ? "lod" : "mar") << ','
       << ihmm::fmt_double(row.mean) << ',' << ihmm::fmt_double(row.lo) << ','
       << ihmm::fmt_double(row.hi) << '\n';
  }
}

// --- model selection ---------------------------------------------------------

struct ModelChoice {
  bool independent = false;
  bool baseline = false;
  ihmm::BaselineKind baseline_kind = ihmm::BaselineKind::Pooled;
  ihmm::CovariateSpec spec;
};

ModelChoice parse_model(const std::string& name, int harmonics) {
  using Kind = ihmm::CovariateSpec::Kind;
  ModelChoice mc;
  mc.spec.harmonics = harmonics;
  if (name == "joint-cyclical") {
    mc.spec.kind = Kind::Cyclical;
  } else if (name == "joint-none") {
    mc.spec.kind = Kind::None;
  } else if (name == "joint-ss-cyclical") {
    mc.spec.kind = Kind::SubjectCyclical;
  } else if (name == "joint-microenv") {
    mc.spec.kind = Kind::Categorical;
  } else if (name == "joint-ss-microenv") {
    mc.spec.kind = Kind::SubjectCategorical;
  } else if (name == "independent-cyclical") {
    mc.independent = true;
    mc.spec.kind = Kind::Cyclical;
  } else if (name == "independent-none") {
    mc.independent = true;
    mc.spec.kind = Kind::None;
  } else if (name == "pooled") {
    mc.baseline = true;
    mc.baseline_kind = ihmm::BaselineKind::Pooled;
  } else if (name == "stratified") {
    mc.baseline = true;
    mc.baseline_kind = ihmm::BaselineKind::Stratified;
  } else if (name == "dpmm") {
    mc.baseline = true;
    mc.baseline_kind = ihmm::BaselineKind::Dpmm;
  } else {
    ihmm::throw_config("UnknownModel", "model '" + name + "' is not in the supported set");
  }
  return mc;
}

// --- simulate ----------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, const std::string& cmdline) {
  ihmm::RunManifest m;
  m.command = cmdline;
  m.started_at = ihmm::iso8601_now();
  m.config_digest = ihmm::fnv1a_hex(ihmm::fnv1a_file(a.config));

  const json j = load_json(
      a.config, {"n_series", "T", "p", "K_true", "scenario", "missing_level", "seed"});
  ihmm::SimConfig cfg;
  cfg.n_series = json_get<int>(j, "n_series", cfg.n_series);
  cfg.T = json_get<int>(j, "T", cfg.T);
  cfg.p = json_get<int>(j, "p", cfg.p);
  cfg.K_true = json_get<int>(j, "K_true", cfg.K_true);
  cfg.missing_level = json_get<double>(j, "missing_level", cfg.missing_level);
  cfg.seed = json_get<std::uint64_t>(j, "seed", cfg.seed);
  const std::string scen = json_get<std::string>(j, "scenario", "shared");
  if (scen == "shared") {
    cfg.scenario = ihmm::Scenario::Shared;
  } else if (scen == "distinct") {
    cfg.scenario = ihmm::Scenario::Distinct;
  } else {
    ihmm::throw_config("UnknownScenario", "scenario must be shared or distinct");
  }
  cfg.validate();
  m.seed = cfg.seed;

  log_info("simulate: " + std::to_string(cfg.n_series) + " series x " + std::to_string(cfg.T) +
           " x " + std::to_string(cfg.p) + ", K_true=" + std::to_string(cfg.K_true));
  auto [ds, truth] = ihmm::generate(cfg);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  ihmm::emit_csv(ds, a.out + "/dataset.csv");
  write_lod_csv(ds.lod, a.out + "/lod.csv");
  ihmm::write_truth(truth, a.out + "/truth.csv");
  ihmm::write_truth_params(truth, a.out + "/truth_params.csv");
  ihmm::write_removed(truth, a.out + "/removed.csv");

  m.finished_at = ihmm::iso8601_now();
  ihmm::inventory_outputs(
      m, a.out, {"dataset.csv", "lod.csv", "truth.csv", "truth_params.csv", "removed.csv"});
  ihmm::write_manifest(m, a.out);
  log_info("simulate: wrote " + a.out);
  return 0;
}

// --- fit ---------------------------------------------------------------------

struct FitArgs {
  std::string data;
  std::string out;
  std::string model;
  std::string config;
  std::string lod_path;
  std::string resume_path;
  int workers = 0;          // 0 = not given
  long long seed = -1;      // <0 = not given
  bool standardize = false;
};

// Draw logs plus the condensed imputation table for one completed chain.
// Returns the written file names relative to dir.
std::vector<std::string> write_fit_outputs(const ihmm::PosteriorDraws& draws,
                                           const ihmm::Dataset& ds, const std::string& dir,
                                           const ihmm::McmcConfig& cfg) {
  ihmm::write_draw_logs(draws, ds, dir, cfg.record_states);
  ihmm::CollectedImputations col;
  if (!draws.imputations.cells.empty()) {
    col = ihmm::collect_imputations(draws.imputations, cfg.imputation_draws_retained);
  }
  write_imputation_summary(col, dir + "/imputation_summary.csv");
  std::vector<std::string> names = {"scalars.csv", "params.csv", "imputations.csv",
                                    "imputation_summary.csv"};
  if (cfg.record_states && !draws.z.empty()) names.insert(names.begin(), "states.csv");
  if (cfg.checkpoint_interval > 0) names.push_back("checkpoint.bin");
  return names;
}

int cmd_fit(const FitArgs& a, const std::string& cmdline) {
  ihmm::RunManifest m;
  m.command = cmdline;
  m.started_at = ihmm::iso8601_now();
  m.data_digest = ihmm::fnv1a_hex(ihmm::fnv1a_file(a.data));

  ihmm::McmcConfig cfg;
  int harmonics = 2;
  double prior_lambda = -1.0;
  double prior_nu = -1.0;
  double prior_psi = -1.0;
  if (!a.config.empty()) {
    m.config_digest = ihmm::fnv1a_hex(ihmm::fnv1a_file(a.config));
    const json j = load_json(
        a.config,
        {"n_iter", "burn_in", "thin", "seed", "workers", "imputation_draws_retained",
         "initial_K", "init_kmeans", "max_states", "trunc_sweeps", "emission_update", "mh_step",
         "collapse_transitions", "record_states", "checkpoint_interval", "checkpoint_path",
         "harmonics", "prior_lambda", "prior_nu", "prior_psi"});
    cfg.n_iter = json_get<int>(j, "n_iter", cfg.n_iter);
    cfg.burn_in = json_get<int>(j, "burn_in", cfg.burn_in);
    cfg.thin = json_get<int>(j, "thin", cfg.thin);
    cfg.seed = json_get<std::uint64_t>(j, "seed", cfg.seed);
    cfg.workers = json_get<int>(j, "workers", cfg.workers);
    cfg.imputation_draws_retained =
        json_get<int>(j, "imputation_draws_retained", cfg.imputation_draws_retained);
    cfg.initial_K = json_get<int>(j, "initial_K", cfg.initial_K);
    cfg.init_kmeans = json_get<bool>(j, "init_kmeans", cfg.init_kmeans);
    cfg.max_states = json_get<int>(j, "max_states", cfg.max_states);
    cfg.trunc_sweeps = json_get<int>(j, "trunc_sweeps", cfg.trunc_sweeps);
    cfg.mh_step = json_get<double>(j, "mh_step", cfg.mh_step);
    cfg.collapse_transitions =
        json_get<bool>(j, "collapse_transitions", cfg.collapse_transitions);
    cfg.record_states = json_get<bool>(j, "record_states", cfg.record_states);
    cfg.checkpoint_interval = json_get<int>(j, "checkpoint_interval", cfg.checkpoint_interval);
    cfg.checkpoint_path = json_get<std::string>(j, "checkpoint_path", cfg.checkpoint_path);
    harmonics = json_get<int>(j, "harmonics", harmonics);
    prior_lambda = json_get<double>(j, "prior_lambda", prior_lambda);
    prior_nu = json_get<double>(j, "prior_nu", prior_nu);
    prior_psi = json_get<double>(j, "prior_psi", prior_psi);
    const std::string upd = json_get<std::string>(j, "emission_update", "conjugate");
    if (upd == "conjugate") {
      cfg.emission_update = ihmm::EmissionUpdate::Conjugate;
    } else if (upd == "mh") {
      cfg.emission_update = ihmm::EmissionUpdate::MhDecomposition;
    } else {
      ihmm::throw_config("BadConfigValue", "emission_update must be conjugate or mh");
    }
  }
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.workers > 0) cfg.workers = a.workers;

  const ModelChoice mc = parse_model(a.model, harmonics);

  arma::vec lod;
  if (!a.lod_path.empty()) {
    lod = read_lod_csv(a.lod_path);
  } else {
    lod = arma::vec(peek_dimension(a.data));
    lod.fill(-arma::datum::inf);
  }

  ihmm::Dataset ds = ihmm::ingest_csv(a.data, ihmm::CovariateSpec{}, lod);

  bool any_lod = false;
  for (const ihmm::Series& sr : ds.series) {
    any_lod = any_lod || arma::any(arma::vectorise(sr.status) ==
                                   static_cast<std::uint8_t>(ihmm::ObsStatus::BelowLOD));
  }
  if (any_lod && a.lod_path.empty()) {
    ihmm::throw_config("MissingLod",
                       "dataset has below-detection cells; pass --lod with the thresholds");
  }

  // The stick covariates were deferred at ingest so categorical label sets
  // can be collected from the data itself.
  ihmm::CovariateSpec spec = mc.spec;
  if (spec.categorical()) {
    std::set<std::string> labs;
    for (const ihmm::Series& sr : ds.series) {
      if (static_cast<int>(sr.microenv.size()) != sr.T()) {
        ihmm::throw_config("NoLabels", "model '" + a.model +
                                           "' needs a microenv column in the dataset");
      }
      labs.insert(sr.microenv.begin(), sr.microenv.end());
    }
    spec.categories.assign(labs.begin(), labs.end());
  }
  if (spec.kind != ihmm::CovariateSpec::Kind::None) {
    for (ihmm::Series& sr : ds.series) {
      sr.covariates = ihmm::build_covariates(sr.clock_time, spec,
                                             sr.microenv.empty() ? nullptr : &sr.microenv);
    }
  }
  cfg.subject_effects = spec.subject_specific();

  std::error_code ec;
  fs::create_directories(a.out, ec);
  std::vector<std::string> outputs;
  if (a.standardize) {
    const ihmm::AffineTransform tr = ihmm::standardize(ds);
    write_standardization(tr, a.out + "/standardization.csv");
    outputs.push_back("standardization.csv");
  }

  ihmm::NiwHyper prior = ihmm::NiwHyper::defaults(ds.p());
  if (prior_lambda > 0) prior.lambda = prior_lambda;
  if (prior_nu > 0) prior.nu = prior_nu;
  if (prior_psi > 0) prior.scale = arma::eye(ds.p(), ds.p()) * prior_psi;
  prior.validate();

  m.seed = cfg.seed;
  log_info("fit: model=" + a.model + " series=" + std::to_string(ds.series.size()) +
           " p=" + std::to_string(ds.p()) + " q=" + std::to_string(spec.q()) +
           " n_iter=" + std::to_string(cfg.n_iter) + " seed=" + std::to_string(cfg.seed));

  if (mc.independent) {
    if (!a.resume_path.empty()) {
      ihmm::throw_config("ResumeUnsupported",
                         "--resume applies to joint models; rerun the affected series fit");
    }
    for (std::size_t i = 0; i < ds.series.size(); ++i) {
      ihmm::Dataset sub;
      sub.lod = ds.lod;
      sub.series.push_back(ds.series[i]);
      sub.series[0].subject_index = 0;
      sub.subjects = {{sub.series[0].subject_id, 0}};
      sub.n_subjects = 1;

      ihmm::McmcConfig scfg = cfg;
      scfg.seed = cfg.seed + 1 + static_cast<std::uint64_t>(i);
      char tag[16];
      std::snprintf(tag, sizeof(tag), "series_%03zu", i);
      const std::string dir = a.out + "/" + std::string(tag);
      if (scfg.checkpoint_interval > 0 && scfg.checkpoint_path.empty()) {
        scfg.checkpoint_path = dir + "/checkpoint.bin";
      }
      log_debug("fit: " + std::string(tag) + " seed=" + std::to_string(scfg.seed));
      const ihmm::PosteriorDraws draws = ihmm::run(sub, scfg, prior);
      for (const std::string& name : write_fit_outputs(draws, sub, dir, scfg)) {
        outputs.push_back(std::string(tag) + "/" + name);
      }
    }
  } else {
    if (cfg.checkpoint_interval > 0 && cfg.checkpoint_path.empty()) {
      cfg.checkpoint_path = a.out + "/checkpoint.bin";
    }
    ihmm::PosteriorDraws draws;
    if (mc.baseline) {
      draws = ihmm::fit_baseline(mc.baseline_kind, ds, cfg, prior);
    } else if (!a.resume_path.empty()) {
      draws = ihmm::resume(ds, cfg, prior, a.resume_path);
    } else {
      draws = ihmm::run(ds, cfg, prior);
    }
    log_debug("fit: " + std::to_string(draws.n_records()) + " records, " +
              std::to_string(draws.transition_ops) + " transition ops");
    for (const std::string& name : write_fit_outputs(draws, ds, a.out, cfg)) {
      outputs.push_back(name);
    }
  }

  m.finished_at = ihmm::iso8601_now();
  ihmm::inventory_outputs(m, a.out, outputs);
  ihmm::write_manifest(m, a.out);
  log_info("fit: wrote " + a.out);
  return 0;
}

// --- evaluate ------------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> fits;
  std::string truth;
  std::string out;
  bool independent = false;
};

void fill_imputation_metrics(const std::vector<ihmm::ImputationRecord>& records,
                             const std::vector<ihmm::RemovedCell>& removed,
                             ihmm::MetricReport& r) {
  const auto fill = [&](ihmm::ObsStatus mech, double& mse, double& bias) {
    try {
      const ihmm::ImpError e = ihmm::imputation_error(records, removed, mech);
      mse = e.mse;
      bias = e.bias;
    } catch (const ihmm::Error& err) {
      if (err.code != "NoCells") throw;
    }
  };
  fill(ihmm::ObsStatus::MAR, r.mar_mse, r.mar_bias);
  fill(ihmm::ObsStatus::BelowLOD, r.lod_mse, r.lod_bias);
}

std::vector<ihmm::ImputationRecord> imputation_records(const ihmm::ImputationDraws& d) {
  std::vector<ihmm::ImputationRecord> records;
  for (std::size_t r = 0; r < d.values.size(); ++r) {
    records.push_back(ihmm::ImputationRecord{static_cast<int>(r) + 1, d.cells, d.values[r]});
  }
  return records;
}

ihmm::MetricReport evaluate_joint(const ihmm::PosteriorDraws& draws,
                                  const ihmm::SimTruth& truth) {
  ihmm::MetricReport r;
  r.k_hat = ihmm::k_hat(draws);
  if (!draws.z.empty() && !truth.z_true.empty()) {
    const std::vector<int> tru = ihmm::pool_labels(truth.z_true);
    double h = 0.0;
    for (const auto& zrec : draws.z) h += ihmm::hamming_distance(ihmm::pool_labels(zrec), tru);
    r.hamming = h / static_cast<double>(draws.z.size());
  }
  if (!draws.z.empty() && !draws.emission_draws.empty() && !truth.mu_true.empty()) {
    r.mu_mse = ihmm::mu_mse(draws, truth);
  }
  if (!draws.imputations.cells.empty() && !truth.removed_cells.empty()) {
    fill_imputation_metrics(imputation_records(draws.imputations), truth.removed_cells, r);
  }
  return r;
}

std::vector<std::string> series_subdirs(const std::string& fit_dir) {
  std::vector<std::string> dirs;
  std::error_code ec;
  for (const fs::directory_entry& e : fs::directory_iterator(fit_dir, ec)) {
    if (e.is_directory() && e.path().filename().string().rfind("series_", 0) == 0) {
      dirs.push_back(e.path().string());
    }
  }
  if (ec) ihmm::throw_io("FitDirUnreadable", "cannot list " + fit_dir);
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) {
    ihmm::throw_io("NoSeriesDirs", "no series_* subdirectories under " + fit_dir);
  }
  return dirs;
}

// A replicate fitted one chain per series: states add up, error rates
// average, and imputation cells are pooled after restoring the original
// series indices.
ihmm::MetricReport evaluate_independent(const std::string& fit_dir,
                                        const ihmm::SimTruth& truth) {
  ihmm::MetricReport r;
  std::vector<double> ks, hams, mus;
  std::vector<ihmm::ImputationRecord> pooled;
  const std::vector<std::string> dirs = series_subdirs(fit_dir);
  for (std::size_t s = 0; s < dirs.size(); ++s) {
    const ihmm::PosteriorDraws draws = ihmm::read_draw_logs(dirs[s]);
    ks.push_back(ihmm::k_hat(draws));
    const bool have_truth_z = s < truth.z_true.size();
    if (!draws.z.empty() && have_truth_z) {
      const std::vector<int> tru =
          ihmm::pool_labels(std::vector<arma::ivec>{truth.z_true[s]});
      double h = 0.0;
      for (const auto& zrec : draws.z) {
        h += ihmm::hamming_distance(ihmm::pool_labels(zrec), tru);
      }
      hams.push_back(h / static_cast<double>(draws.z.size()));
    }
    if (!draws.z.empty() && !draws.emission_draws.empty() && have_truth_z &&
        !truth.mu_true.empty()) {
      ihmm::SimTruth sub;
      sub.z_true = {truth.z_true[s]};
      sub.mu_true = truth.mu_true;
      sub.sigma_true = truth.sigma_true;
      mus.push_back(ihmm::mu_mse(draws, sub));
    }
    if (!draws.imputations.cells.empty()) {
      ihmm::ImputationDraws rew = draws.imputations;
      for (ihmm::CellKey& c : rew.cells) c.series = static_cast<int>(s);
      for (ihmm::ImputationRecord& rec : imputation_records(rew)) {
        pooled.push_back(std::move(rec));
      }
    }
    log_debug("evaluate: " + dirs[s] + " k_hat=" + std::to_string(ks.back()));
  }
  r.k_hat = ihmm::aggregate_k_hat(ks);
  if (!hams.empty()) r.hamming = ihmm::aggregate_hamming(hams);
  if (!mus.empty()) {
    r.mu_mse = std::accumulate(mus.begin(), mus.end(), 0.0) / static_cast<double>(mus.size());
  }
  if (!pooled.empty() && !truth.removed_cells.empty()) {
    fill_imputation_metrics(pooled, truth.removed_cells, r);
  }
  return r;
}

void write_metric_summary(const std::vector<ihmm::MetricReport>& reps,
                          const std::string& path) {
  static const char* names[] = {"k_hat",    "hamming",  "mu_mse", "mar_mse",
                                "mar_bias", "lod_mse",  "lod_bias"};
  const auto field = [](const ihmm::MetricReport& r, int i) {
    switch (i) {
      case 0: return r.k_hat;
      case 1: return r.hamming;
      case 2: return r.mu_mse;
      case 3: return r.mar_mse;
      case 4: return r.mar_bias;
      case 5: return r.lod_mse;
      default: return r.lod_bias;
    }
  };
  std::ofstream os = open_out(path);
  os << "metric,mean,se\n";
  for (int i = 0; i < 7; ++i) {
    std::vector<double> vals;
    for (const ihmm::MetricReport& r : reps) {
      if (std::isfinite(field(r, i))) vals.push_back(field(r, i));
    }
    os << names[i] << ',';
    if (vals.empty()) {
      os << ",\n";
      continue;
    }
    const double n = static_cast<double>(vals.size());
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
    double se = 0.0;
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      se = std::sqrt(ss / (n - 1.0) / n);
    }
    os << ihmm::fmt_double(mean) << ',' << ihmm::fmt_double(se) << '\n';
  }
}

int cmd_evaluate(const EvaluateArgs& a, const std::string& cmdline) {
  ihmm::RunManifest m;
  m.command = cmdline;
  m.started_at = ihmm::iso8601_now();

  const ihmm::SimTruth truth = ihmm::read_truth(a.truth);
  std::vector<ihmm::MetricReport> reports;
  for (const std::string& fit : a.fits) {
    log_info("evaluate: " + fit);
    if (a.independent) {
      reports.push_back(evaluate_independent(fit, truth));
    } else {
      reports.push_back(evaluate_joint(ihmm::read_draw_logs(fit), truth));
    }
  }

  std::error_code ec;
  fs::create_directories(a.out, ec);
  ihmm::write_metrics(reports, a.out + "/metrics.csv");
  write_metric_summary(reports, a.out + "/summary.csv");

  m.finished_at = ihmm::iso8601_now();
  ihmm::inventory_outputs(m, a.out, {"metrics.csv", "summary.csv"});
  ihmm::write_manifest(m, a.out);
  log_info("evaluate: wrote " + a.out);
  return 0;
}

// --- summarize -------------------------------------------------------------------

struct SummarizeArgs {
  std::string fit;
  std::string out;
  std::string data;
  std::string lod_path;
  int subsample = 0;
};

void write_state_means(const ihmm::PosteriorDraws& draws, const ihmm::PointPartition& pp,
                       const std::string& path) {
  std::set<int> states;
  for (const auto& zs : pp.z) states.insert(zs.begin(), zs.end());
  std::ofstream os = open_out(path);
  os << "state,dim,mean,min,max\n";
  for (int k : states) {
    // Model-averaged over the records where state k is occupied.
    std::vector<arma::vec> mus;
    for (int r = 0; r < draws.n_records(); ++r) {
      if (static_cast<std::size_t>(r) >= draws.emission_draws.size()) break;
      if (k >= static_cast<int>(draws.emission_draws[r].size())) continue;
      bool occupied = false;
      for (const auto& zs : draws.z[r]) {
        occupied = occupied || std::find(zs.begin(), zs.end(), k) != zs.end();
      }
      if (occupied) mus.push_back(draws.emission_draws[r][k].mu);
    }
    if (mus.empty()) continue;
    const int p = static_cast<int>(mus[0].n_elem);
    for (int d = 0; d < p; ++d) {
      double mean = 0.0, lo = arma::datum::inf, hi = -arma::datum::inf;
      for (const arma::vec& mu : mus) {
        mean += mu(d);
        lo = std::min(lo, mu(d));
        hi = std::max(hi, mu(d));
      }
      mean /= static_cast<double>(mus.size());
      os << k << ',' << (d + 1) << ',' << ihmm::fmt_double(mean) << ','
         << ihmm::fmt_double(lo) << ',' << ihmm::fmt_double(hi) << '\n';
    }
  }
}

int cmd_summarize(const SummarizeArgs& a, const std::string& cmdline) {
  ihmm::RunManifest m;
  m.command = cmdline;
  m.started_at = ihmm::iso8601_now();

  const ihmm::PosteriorDraws draws = ihmm::read_draw_logs(a.fit);
  if (draws.z.empty()) {
    ihmm::throw_config("NoDraws", "fit was run without recorded states; nothing to summarize");
  }

  ihmm::PointPartition pp;
  if (draws.n_records() == 1) {
    pp.record_index = 0;
    pp.avg_vi = 0.0;
    pp.z = draws.z[0];
  } else {
    pp = ihmm::point_estimate_partition(draws, a.subsample);
  }
  log_info("summarize: point partition from record " + std::to_string(pp.record_index) +
           ", avg VI " + std::to_string(pp.avg_vi));

  std::error_code ec;
  fs::create_directories(a.out, ec);
  ihmm::write_point_partition(pp, a.out + "/point_partition.csv");
  std::vector<std::string> outputs = {"point_partition.csv"};
  if (!draws.emission_draws.empty()) {
    write_state_means(draws, pp, a.out + "/state_means.csv");
    outputs.push_back("state_means.csv");
  }

  if (!a.data.empty()) {
    m.data_digest = ihmm::fnv1a_hex(ihmm::fnv1a_file(a.data));
    arma::vec lod;
    if (!a.lod_path.empty()) {
      lod = read_lod_csv(a.lod_path);
    } else {
      lod = arma::vec(peek_dimension(a.data));
      lod.fill(-arma::datum::inf);
    }
    const ihmm::Dataset ds = ihmm::ingest_csv(a.data, ihmm::CovariateSpec{}, lod);
    const ihmm::Crosstab tab = ihmm::microenv_crosstab(pp.z, ds);
    ihmm::write_crosstab(tab, a.out + "/crosstab.csv");
    outputs.push_back("crosstab.csv");
  }

  m.finished_at = ihmm::iso8601_now();
  ihmm::inventory_outputs(m, a.out, outputs);
  ihmm::write_manifest(m, a.out);
  log_info("summarize: wrote " + a.out);
  return 0;
}

// --- entry -------------------------------------------------------------------------

void dump_diagnostic(const std::string& out_dir, const std::string& cmdline,
                     const std::string& what) {
  if (out_dir.empty()) return;
  try {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream os(out_dir + "/diagnostic.txt");
    os << "command: " << cmdline << "\n" << what << "\n";
  } catch (...) {
    // Diagnostics are best effort; the exit code already signals failure.
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cmdline = join_args(argc, argv);

  CLI::App app{"Covariate-dependent infinite hidden Markov model toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Generate a synthetic dataset with truth");
  c_sim->add_option("--config", sim.config, "Simulation config (json)")->required();
  c_sim->add_option("--out", sim.out, "Output directory")->required();

  FitArgs fit;
  CLI::App* c_fit = app.add_subcommand("fit", "Run posterior inference on a dataset");
  c_fit->add_option("--data", fit.data, "Dataset csv")->required();
  c_fit->add_option("--out", fit.out, "Output directory")->required();
  c_fit->add_option("--model", fit.model,
                    "One of joint-{cyclical,none,ss-cyclical,microenv,ss-microenv}, "
                    "independent-{cyclical,none}, pooled, stratified, dpmm")
      ->required();
  c_fit->add_option("--config", fit.config, "Sampler config (json)");
  c_fit->add_option("--lod", fit.lod_path, "Detection thresholds csv (dim,threshold)");
  c_fit->add_option("--workers", fit.workers, "Worker threads (overrides config)");
  c_fit->add_option("--seed", fit.seed, "Master seed (overrides config)");
  c_fit->add_option("--resume", fit.resume_path, "Continue from this checkpoint file");
  c_fit->add_flag("--standardize", fit.standardize,
                  "Center and scale each dimension before fitting");

  EvaluateArgs ev;
  CLI::App* c_ev = app.add_subcommand("evaluate", "Score fits against a simulation truth");
  c_ev->add_option("--fit", ev.fits, "Fit directory, repeatable: one per replicate")
      ->required();
  c_ev->add_option("--truth", ev.truth, "Simulation output directory with the truth files")
      ->required();
  c_ev->add_option("--out", ev.out, "Output directory")->required();
  c_ev->add_flag("--independent", ev.independent,
                 "Fit directories hold per-series series_* subdirectories");

  SummarizeArgs summ;
  CLI::App* c_summ = app.add_subcommand("summarize", "Condense a fit into plot-ready tables");
  c_summ->add_option("--fit", summ.fit, "Fit directory")->required();
  c_summ->add_option("--out", summ.out, "Output directory")->required();
  c_summ->add_option("--data", summ.data, "Dataset csv, enables the microenv crosstab");
  c_summ->add_option("--lod", summ.lod_path, "Detection thresholds csv for --data");
  c_summ->add_option("--subsample", summ.subsample,
                     "Candidate draws for the point partition (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  std::string out_dir;
  try {
    if (c_sim->parsed()) {
      out_dir = sim.out;
      return cmd_simulate(sim, cmdline);
    }
    if (c_fit->parsed()) {
      out_dir = fit.out;
      return cmd_fit(fit, cmdline);
    }
    if (c_ev->parsed()) {
      out_dir = ev.out;
      return cmd_evaluate(ev, cmdline);
    }
    out_dir = summ.out;
    return cmd_summarize(summ, cmdline);
  } catch (const ihmm::Error& e) {
    std::cerr << "[ihmm] error: " << e.what() << std::endl;
    switch (e.kind) {
      case ihmm::ErrorKind::Config:
        return 2;
      case ihmm::ErrorKind::Io:
        return 3;
      default:
        dump_diagnostic(out_dir, cmdline, e.what());
        return 4;
    }
  } catch (const std::exception& e) {
    std::cerr << "[ihmm] error: " << e.what() << std::endl;
    dump_diagnostic(out_dir, cmdline, e.what());
    return 4;
  }
}
