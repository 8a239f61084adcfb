#pragma once

#include <armadillo>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ihmm {

enum class ObsStatus : std::uint8_t { Observed = 0, MAR = 1, BelowLOD = 2 };

// Design for the time-varying covariate vector x_ist entering the stick
// weights.  Subject-specific kinds enable the per-subject deviation terms;
// the non-subject kinds force those terms to zero.
struct CovariateSpec {
  enum class Kind { None, Cyclical, SubjectCyclical, Categorical, SubjectCategorical };
  Kind kind = Kind::None;
  int harmonics = 2;                     // sin/cos pairs for cyclical kinds
  std::vector<std::string> categories;   // categorical kinds; first = reference

  bool cyclical() const { return kind == Kind::Cyclical || kind == Kind::SubjectCyclical; }
  bool categorical() const {
    return kind == Kind::Categorical || kind == Kind::SubjectCategorical;
  }
  bool subject_specific() const {
    return kind == Kind::SubjectCyclical || kind == Kind::SubjectCategorical;
  }
  int q() const {
    if (cyclical()) return 2 * harmonics;
    if (categorical()) return static_cast<int>(categories.size()) - 1;
    return 0;
  }
};

// One contiguous recording: a (subject, day) block of T time points.
struct Series {
  std::string subject_id;
  std::string day_id;
  int subject_index = -1;            // contiguous, assigned at ingest
  arma::mat values;                  // T x p; non-Observed cells hold imputations
  arma::Mat<std::uint8_t> status;    // T x p cast of ObsStatus
  arma::vec clock_time;              // length T, fraction of day in [0,1)
  arma::mat covariates;              // T x q
  std::vector<std::string> microenv; // empty, or length T

  int T() const { return static_cast<int>(values.n_rows); }
  int p() const { return static_cast<int>(values.n_cols); }
  ObsStatus stat(int t, int d) const { return static_cast<ObsStatus>(status(t, d)); }
  void set_stat(int t, int d, ObsStatus s) { status(t, d) = static_cast<std::uint8_t>(s); }
};

struct Dataset {
  std::vector<Series> series;
  arma::vec lod;                     // length p, same units as values
  std::map<std::string, int> subjects;  // subject_id -> contiguous index
  int n_subjects = 0;

  int p() const { return series.empty() ? static_cast<int>(lod.n_elem) : series[0].p(); }
  int q() const { return series.empty() ? 0 : static_cast<int>(series[0].covariates.n_cols); }
  std::size_t total_T() const {
    std::size_t s = 0;
    for (const Series& sr : series) s += sr.T();
    return s;
  }
};

// Per-dimension map z = (x - shift) / scale between original and model units.
struct AffineTransform {
  arma::vec shift;
  arma::vec scale;

  double to_model(double x, int d) const { return (x - shift(d)) / scale(d); }
  double to_orig(double z, int d) const { return shift(d) + scale(d) * z; }
  bool empty() const { return shift.n_elem == 0; }
};

// Shortest decimal string that re-parses to the same double.
std::string fmt_double(double v);
double parse_double(const std::string& s, const char* what);

// Covariate rows for one series.  Cyclical: [sin(h), cos(h), sin(2h), cos(2h), ...]
// with h = 2*pi*clock_time.  Categorical: reference-coded indicators, first
// category as reference.  None: zero columns.
arma::mat build_covariates(const arma::vec& clock_time, const CovariateSpec& spec,
                           const std::vector<std::string>* microenv = nullptr);

// Long-format CSV with header subject_id, day_id, time_index, clock_time,
// value_1..value_p, status_1..status_p [, microenv].  Status literals are
// obs|mar|lod.  Non-observed cells hold NaN until the sampler imputes them.
Dataset ingest_csv(const std::string& path, const CovariateSpec& spec, const arma::vec& lod);
void emit_csv(const Dataset& ds, const std::string& path);

// Centers and scales each dimension so its Observed cells pooled across all
// series have mean 0 and variance 1 (1/n denominator); transforms the lod
// vector identically and returns the map for back-transforming imputations.
AffineTransform standardize(Dataset& ds);

}  // namespace ihmm
