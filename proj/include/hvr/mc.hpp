#pragma once

#include "hvr/common.hpp"
#include "hvr/pde.hpp"
#include "hvr/rfield.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hvr {

/// 1.96, the only built-in confidence level (95%).
inline constexpr double kZ95 = 1.96;

struct EstimatorReport {
  std::string method;
  int dim = 2;
  int N = 0;
  int r = 0;
  std::size_t M = 0;
  SmallMat mean;
  SmallMat variance;       // unbiased, 1/(M-1)
  SmallMat ci_half_width;  // 1.96 sqrt(variance / M)
  std::uint64_t corrector_solves = 0;
  std::uint64_t precompute_solves = 0;  // one-off tables, reported separately
  std::uint64_t master_seed = 0;
  double wall_time = 0.0;  // seconds; kept out of the deterministic JSON
  nlohmann::json extras = nlohmann::json::object();
};

struct SampleRow {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  SmallMat entries;          // A*_N of the primary realization
  std::vector<double> aux;   // method-specific, named by SampleTable::aux_names
};

struct SampleTable {
  int dim = 2;
  std::vector<std::string> aux_names;
  /// Aux column prefix holding the estimator samples ("" means the entries).
  std::string estimator_prefix;
  std::vector<SampleRow> rows;

  std::vector<SmallMat> estimator_samples() const;
};

/// Append aux names "<prefix>_11", "<prefix>_12", ... for a d x d matrix.
void append_matrix_names(std::vector<std::string>& names, const std::string& prefix, int dim);
void append_matrix_values(std::vector<double>& values, const SmallMat& m);

struct SampleStats {
  SmallMat mean;
  SmallMat variance;
};

/// Two-pass mean and unbiased variance, reduced in index order. Requires >= 2 samples.
SampleStats sample_stats(const std::vector<SmallMat>& samples);

/// Fills mean / variance / ci_half_width / M of a report from estimator samples.
void fill_statistics(EstimatorReport& report, const std::vector<SmallMat>& samples);

/// mean -/+ 1.96 sqrt(variance / M).
std::pair<double, double> confidence_interval(double mean, double variance, std::size_t M);

struct VarianceRatio {
  double ratio = 1.0;
  double cost_ratio = 1.0;  // reduced solves / baseline solves
  bool cost_matched = true;
  std::string warning;
};

/// Baseline variance over reduced variance for entry (i, j), 0-based. A cost
/// mismatch above 5% in corrector solves is flagged, not rejected.
VarianceRatio variance_ratio(const EstimatorReport& baseline, const EstimatorReport& reduced, int i, int j);
double variance_ratio(const SampleTable& baseline, const SampleTable& reduced, int i, int j);

/// Plain Monte Carlo over M i.i.d. draws with streams split from master_seed.
std::pair<EstimatorReport, SampleTable> run_mc(const FieldSpec& spec, int N, int r, std::size_t M,
                                               std::uint64_t master_seed, const SolveOptions& options = {});

nlohmann::json report_to_json(const EstimatorReport& report);
EstimatorReport report_from_json(const nlohmann::json& j);
std::string table_to_csv(const SampleTable& table);

nlohmann::json matrix_to_json(const SmallMat& m);
SmallMat matrix_from_json(const nlohmann::json& j);
nlohmann::json unit_cell_to_json(const UnitCell& cell);
UnitCell unit_cell_from_json(const nlohmann::json& j);

}  // namespace hvr
