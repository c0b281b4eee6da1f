#include "hvr/mc.hpp"

#include "hvr/homog.hpp"
#include "hvr/parallel.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace hvr {

std::vector<SmallMat> SampleTable::estimator_samples() const {
  std::vector<SmallMat> out;
  out.reserve(rows.size());
  if (estimator_prefix.empty()) {
    for (const auto& r : rows) out.push_back(r.entries);
    return out;
  }
  std::size_t first = aux_names.size();
  for (std::size_t c = 0; c < aux_names.size(); ++c)
    if (aux_names[c] == estimator_prefix + "_11") {
      first = c;
      break;
    }
  if (first == aux_names.size()) throw ConfigurationError("sample table lacks estimator columns " + estimator_prefix);
  for (const auto& r : rows) {
    SmallMat m(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) m(i, j) = r.aux[first + static_cast<std::size_t>(i * dim + j)];
    out.push_back(m);
  }
  return out;
}

void append_matrix_names(std::vector<std::string>& names, const std::string& prefix, int dim) {
  for (int i = 1; i <= dim; ++i)
    for (int j = 1; j <= dim; ++j) names.push_back(prefix + "_" + std::to_string(i) + std::to_string(j));
}

void append_matrix_values(std::vector<double>& values, const SmallMat& m) {
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) values.push_back(m(i, j));
}

SampleStats sample_stats(const std::vector<SmallMat>& samples) {
  if (samples.size() < 2) throw ConfigurationError("statistics need at least 2 samples");
  const auto d = samples.front().rows();
  SampleStats s;
  s.mean = SmallMat::Zero(d, d);
  for (const auto& m : samples) s.mean += m;
  s.mean /= static_cast<double>(samples.size());
  s.variance = SmallMat::Zero(d, d);
  for (const auto& m : samples) s.variance += (m - s.mean).cwiseAbs2();
  s.variance /= static_cast<double>(samples.size() - 1);
  return s;
}

void fill_statistics(EstimatorReport& report, const std::vector<SmallMat>& samples) {
  const SampleStats s = sample_stats(samples);
  report.M = samples.size();
  report.mean = s.mean;
  report.variance = s.variance;
  report.ci_half_width = (kZ95 * (s.variance / static_cast<double>(samples.size())).cwiseSqrt());
}

std::pair<double, double> confidence_interval(double mean, double variance, std::size_t M) {
  if (variance < 0.0) throw DomainError("variance must be non-negative");
  if (M < 2) throw DomainError("confidence interval needs M >= 2");
  const double half = kZ95 * std::sqrt(variance / static_cast<double>(M));
  return {mean - half, mean + half};
}

VarianceRatio variance_ratio(const EstimatorReport& baseline, const EstimatorReport& reduced, int i, int j) {
  VarianceRatio out;
  out.ratio = baseline.variance(i, j) / reduced.variance(i, j);
  const double a = static_cast<double>(baseline.corrector_solves);
  const double b = static_cast<double>(reduced.corrector_solves);
  out.cost_ratio = a > 0.0 ? b / a : 1.0;
  const double mismatch = std::abs(a - b) / std::max({a, b, 1.0});
  out.cost_matched = mismatch <= 0.05;
  if (!out.cost_matched) {
    std::ostringstream msg;
    msg << "cost mismatch: " << baseline.corrector_solves << " vs " << reduced.corrector_solves
        << " corrector solves";
    out.warning = msg.str();
  }
  return out;
}

double variance_ratio(const SampleTable& baseline, const SampleTable& reduced, int i, int j) {
  const SampleStats a = sample_stats(baseline.estimator_samples());
  const SampleStats b = sample_stats(reduced.estimator_samples());
  return a.variance(i, j) / b.variance(i, j);
}

std::pair<EstimatorReport, SampleTable> run_mc(const FieldSpec& spec, int N, int r, std::size_t M,
                                               std::uint64_t master_seed, const SolveOptions& options) {
  validate(spec);
  if (M < 2) throw ConfigurationError("run_mc requires M >= 2");
  const auto start = std::chrono::steady_clock::now();
  std::vector<HomogenizedMatrix> results(M);
  parallel_for(M, [&](std::size_t m) {
    try {
      Stream stream = Stream::split(master_seed, m);
      results[m] = homogenized_matrix(draw_field(spec, N, stream), r, options);
    } catch (const std::exception& e) {
      throw RealizationError(m, e.what());
    }
  });

  SampleTable table;
  table.dim = spec.dim;
  table.rows.resize(M);
  std::vector<SmallMat> samples(M);
  for (std::size_t m = 0; m < M; ++m) {
    table.rows[m] = {m, results[m].seed, results[m].value, {}};
    samples[m] = results[m].value;
  }
  EstimatorReport report;
  report.method = "mc";
  report.dim = spec.dim;
  report.N = N;
  report.r = r;
  report.master_seed = master_seed;
  report.corrector_solves = static_cast<std::uint64_t>(spec.dim) * M;
  fill_statistics(report, samples);
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {report, table};
}

nlohmann::json matrix_to_json(const SmallMat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

SmallMat matrix_from_json(const nlohmann::json& j) {
  if (j.is_number()) return scaled_identity(1, j.get<double>());
  const auto d = static_cast<Eigen::Index>(j.size());
  if (d < 1 || d > 2) throw ConfigurationError("matrix must be 1x1 or 2x2");
  SmallMat m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_array() || static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != d)
      throw ConfigurationError("matrix rows must have equal length");
    for (Eigen::Index k = 0; k < d; ++k)
      m(i, k) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

nlohmann::json unit_cell_to_json(const UnitCell& c) {
  nlohmann::json j;
  j["dim"] = c.dim;
  j["subgrid"] = c.subgrid;
  j["values"] = nlohmann::json::array();
  for (const auto& m : c.values) j["values"].push_back(matrix_to_json(m));
  return j;
}

UnitCell unit_cell_from_json(const nlohmann::json& j) {
  UnitCell c;
  c.dim = j.at("dim").get<int>();
  c.subgrid = j.at("subgrid").get<int>();
  for (const auto& m : j.at("values")) c.values.push_back(matrix_from_json(m));
  return c;
}

nlohmann::json report_to_json(const EstimatorReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["dim"] = report.dim;
  j["N"] = report.N;
  j["r"] = report.r;
  j["M"] = report.M;
  j["mean"] = matrix_to_json(report.mean);
  j["variance"] = matrix_to_json(report.variance);
  j["ci_half_width"] = matrix_to_json(report.ci_half_width);
  j["corrector_solves"] = report.corrector_solves;
  j["precompute_solves"] = report.precompute_solves;
  j["master_seed"] = report.master_seed;
  j["extras"] = report.extras;
  return j;
}

EstimatorReport report_from_json(const nlohmann::json& j) {
  EstimatorReport r;
  r.method = j.at("method").get<std::string>();
  r.dim = j.at("dim").get<int>();
  r.N = j.at("N").get<int>();
  r.r = j.at("r").get<int>();
  r.M = j.at("M").get<std::size_t>();
  r.mean = matrix_from_json(j.at("mean"));
  r.variance = matrix_from_json(j.at("variance"));
  r.ci_half_width = matrix_from_json(j.at("ci_half_width"));
  r.corrector_solves = j.at("corrector_solves").get<std::uint64_t>();
  r.precompute_solves = j.value("precompute_solves", std::uint64_t{0});
  r.master_seed = j.at("master_seed").get<std::uint64_t>();
  r.wall_time = j.value("wall_time", 0.0);
  r.extras = j.value("extras", nlohmann::json::object());
  return r;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

std::string table_to_csv(const SampleTable& table) {
  std::ostringstream out;
  out << "index,seed";
  for (int i = 1; i <= table.dim; ++i)
    for (int j = 1; j <= table.dim; ++j) out << ",entry_" << i << j;
  for (const auto& name : table.aux_names) out << ',' << name;
  out << '\n';
  for (const auto& row : table.rows) {
    out << row.index << ',' << row.seed;
    for (int i = 0; i < table.dim; ++i)
      for (int j = 0; j < table.dim; ++j) out << ',' << fmt(row.entries(i, j));
    for (double v : row.aux) out << ',' << fmt(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace hvr
