#include "ihmm/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ihmm/errors.hpp"

namespace ihmm {

std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const char* what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e) {
    throw_io("BadNumber", std::string("cannot parse '") + s + "' as " + what);
  }
  return v;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

ObsStatus parse_status(const std::string& s) {
  if (s == "obs") return ObsStatus::Observed;
  if (s == "mar") return ObsStatus::MAR;
  if (s == "lod") return ObsStatus::BelowLOD;
  throw_io("StatusValueConflict", "unknown status literal '" + s + "'");
}

const char* status_literal(ObsStatus s) {
  switch (s) {
    case ObsStatus::Observed: return "obs";
    case ObsStatus::MAR: return "mar";
    default: return "lod";
  }
}

int column_index(const std::vector<std::string>& header, const std::string& name,
                 bool required) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  if (required) throw_io("MissingColumn", "required column '" + name + "' not found");
  return -1;
}

}  // namespace

arma::mat build_covariates(const arma::vec& clock_time, const CovariateSpec& spec,
                           const std::vector<std::string>* microenv) {
  const int T = static_cast<int>(clock_time.n_elem);
  const int q = spec.q();
  arma::mat X(T, std::max(q, 0), arma::fill::zeros);
  if (spec.kind == CovariateSpec::Kind::None) return X;

  if (spec.cyclical()) {
    for (int t = 0; t < T; ++t) {
      const double h = 2.0 * M_PI * clock_time(t);
      for (int m = 0; m < spec.harmonics; ++m) {
        X(t, 2 * m) = std::sin((m + 1) * h);
        X(t, 2 * m + 1) = std::cos((m + 1) * h);
      }
    }
    return X;
  }

  // Categorical kinds
  if (spec.categories.size() < 2) {
    throw_config("UnknownCategory", "categorical covariates need at least two categories");
  }
  if (microenv == nullptr || static_cast<int>(microenv->size()) != T) {
    throw_config("UnknownCategory", "categorical covariates need a label per time point");
  }
  for (int t = 0; t < T; ++t) {
    const std::string& lab = (*microenv)[t];
    int idx = -1;
    for (std::size_t c = 0; c < spec.categories.size(); ++c) {
      if (spec.categories[c] == lab) { idx = static_cast<int>(c); break; }
    }
    if (idx < 0) throw_config("UnknownCategory", "label '" + lab + "' not in category set");
    if (idx > 0) X(t, idx - 1) = 1.0;
  }
  return X;
}

Dataset ingest_csv(const std::string& path, const CovariateSpec& spec_in,
                   const arma::vec& lod) {
  std::ifstream in(path);
  if (!in) throw_io("FileOpen", "cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw_io("EmptyDataset", "no header row in '" + path + "'");
  const std::vector<std::string> header = split_csv_line(line);

  const int p = static_cast<int>(lod.n_elem);
  const int c_subj = column_index(header, "subject_id", true);
  const int c_day = column_index(header, "day_id", true);
  const int c_time = column_index(header, "time_index", true);
  const int c_clock = column_index(header, "clock_time", true);
  std::vector<int> c_val(p), c_stat(p);
  for (int d = 0; d < p; ++d) {
    c_val[d] = column_index(header, "value_" + std::to_string(d + 1), true);
    c_stat[d] = column_index(header, "status_" + std::to_string(d + 1), true);
  }
  const int c_env = column_index(header, "microenv", false);
  // A value_{p+1} column means the file has more dimensions than the lod vector.
  for (const std::string& name : header) {
    if (name.rfind("value_", 0) == 0) {
      const int k = std::atoi(name.c_str() + 6);
      if (k > p) throw_io("DimensionMismatch", "file has column '" + name +
                          "' but lod vector has length " + std::to_string(p));
    }
  }

  struct Row {
    double time_index, clock;
    arma::rowvec vals;
    std::vector<ObsStatus> stats;
    std::string env;
  };
  // key preserves first-appearance order of (subject, day) blocks
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<Row>> blocks;

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw_io("DimensionMismatch", "line " + std::to_string(lineno) + ": expected " +
               std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    Row row;
    row.time_index = parse_double(f[c_time], "time_index");
    row.clock = parse_double(f[c_clock], "clock_time");
    if (row.clock < 0.0 || row.clock >= 1.0) {
      throw_io("NonmonotoneTime", "line " + std::to_string(lineno) +
               ": clock_time must lie in [0,1)");
    }
    row.vals.set_size(p);
    row.stats.resize(p);
    for (int d = 0; d < p; ++d) {
      const ObsStatus st = parse_status(f[c_stat[d]]);
      row.stats[d] = st;
      const std::string& cell = f[c_val[d]];
      if (st == ObsStatus::Observed) {
        if (cell.empty()) {
          throw_io("StatusValueConflict", "line " + std::to_string(lineno) +
                   ": observed cell in dimension " + std::to_string(d + 1) + " is empty");
        }
        const double v = parse_double(cell, "value");
        if (!(v > lod(d))) {
          throw_io("StatusValueConflict", "line " + std::to_string(lineno) +
                   ": observed value " + fmt_double(v) + " does not exceed the lod " +
                   fmt_double(lod(d)) + " in dimension " + std::to_string(d + 1));
        }
        row.vals(d) = v;
      } else {
        // Any stored value in a mar/lod cell is discarded.
        row.vals(d) = std::numeric_limits<double>::quiet_NaN();
      }
    }
    if (c_env >= 0) row.env = f[c_env];
    const std::pair<std::string, std::string> key{f[c_subj], f[c_day]};
    auto it = blocks.find(key);
    if (it == blocks.end()) {
      order.push_back(key);
      it = blocks.emplace(key, std::vector<Row>{}).first;
    } else if (!it->second.empty() && !(row.time_index > it->second.back().time_index)) {
      throw_io("NonmonotoneTime", "line " + std::to_string(lineno) +
               ": time_index not strictly increasing within series " + key.first + "/" +
               key.second);
    }
    it->second.push_back(std::move(row));
  }
  if (order.empty()) throw_io("EmptyDataset", "'" + path + "' holds no data rows");

  Dataset ds;
  ds.lod = lod;
  for (const auto& key : order) {
    const std::vector<Row>& rows = blocks[key];
    const int T = static_cast<int>(rows.size());
    Series sr;
    sr.subject_id = key.first;
    sr.day_id = key.second;
    auto [sit, inserted] = ds.subjects.try_emplace(sr.subject_id, ds.n_subjects);
    if (inserted) ++ds.n_subjects;
    sr.subject_index = sit->second;
    sr.values.set_size(T, p);
    sr.status.set_size(T, p);
    sr.clock_time.set_size(T);
    bool any_env = false;
    for (int t = 0; t < T; ++t) {
      sr.values.row(t) = rows[t].vals;
      for (int d = 0; d < p; ++d) sr.set_stat(t, d, rows[t].stats[d]);
      sr.clock_time(t) = rows[t].clock;
      if (!rows[t].env.empty()) any_env = true;
      if (t > 0 && !(sr.clock_time(t) > sr.clock_time(t - 1))) {
        throw_io("NonmonotoneTime", "clock_time not strictly increasing within series " +
                 sr.subject_id + "/" + sr.day_id);
      }
    }
    if (any_env) {
      sr.microenv.resize(T);
      for (int t = 0; t < T; ++t) sr.microenv[t] = rows[t].env;
    }
    sr.covariates = build_covariates(sr.clock_time, spec_in,
                                     any_env ? &sr.microenv : nullptr);
    ds.series.push_back(std::move(sr));
  }
  return ds;
}

void emit_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("FileOpen", "cannot write '" + path + "'");
  const int p = ds.p();
  bool any_env = false;
  for (const Series& sr : ds.series) any_env = any_env || !sr.microenv.empty();

  out << "subject_id,day_id,time_index,clock_time";
  for (int d = 0; d < p; ++d) out << ",value_" << (d + 1);
  for (int d = 0; d < p; ++d) out << ",status_" << (d + 1);
  if (any_env) out << ",microenv";
  out << "\n";

  for (const Series& sr : ds.series) {
    for (int t = 0; t < sr.T(); ++t) {
      out << sr.subject_id << ',' << sr.day_id << ',' << t << ','
          << fmt_double(sr.clock_time(t));
      for (int d = 0; d < p; ++d) {
        out << ',';
        if (sr.stat(t, d) == ObsStatus::Observed) out << fmt_double(sr.values(t, d));
      }
      for (int d = 0; d < p; ++d) out << ',' << status_literal(sr.stat(t, d));
      if (any_env) out << ',' << (sr.microenv.empty() ? "" : sr.microenv[t]);
      out << "\n";
    }
  }
  if (!out) throw_io("FileOpen", "write to '" + path + "' failed");
}

AffineTransform standardize(Dataset& ds) {
  const int p = ds.p();
  AffineTransform tr;
  tr.shift.set_size(p);
  tr.scale.set_size(p);
  for (int d = 0; d < p; ++d) {
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const Series& sr : ds.series) {
      for (int t = 0; t < sr.T(); ++t) {
        if (sr.stat(t, d) == ObsStatus::Observed) {
          s += sr.values(t, d);
          s2 += sr.values(t, d) * sr.values(t, d);
          ++n;
        }
      }
    }
    if (n < 2) {
      throw_numeric("DegenerateDimension", "dimension " + std::to_string(d + 1) +
                    " has fewer than 2 observed values");
    }
    const double mean = s / static_cast<double>(n);
    const double var = s2 / static_cast<double>(n) - mean * mean;
    if (!(var > 0.0)) {
      throw_numeric("DegenerateDimension", "dimension " + std::to_string(d + 1) +
                    " has zero variance over observed cells");
    }
    tr.shift(d) = mean;
    tr.scale(d) = std::sqrt(var);
  }
  for (Series& sr : ds.series) {
    for (int d = 0; d < p; ++d) {
      for (int t = 0; t < sr.T(); ++t) {
        if (std::isfinite(sr.values(t, d))) {
          sr.values(t, d) = tr.to_model(sr.values(t, d), d);
        }
      }
    }
  }
  for (int d = 0; d < p; ++d) ds.lod(d) = tr.to_model(ds.lod(d), d);
  return tr;
}

}  // namespace ihmm
