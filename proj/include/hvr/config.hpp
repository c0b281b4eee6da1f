#pragma once

#include "hvr/mc.hpp"
#include "hvr/rfield.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace hvr {

inline constexpr int kConfigSchemaVersion = 1;

/// One experiment. Keys and defaults are listed in the README.
struct ExperimentConfig {
  std::string method = "mc";  // mc, antithetic, cv1, cv2, sqs1, sqs2, oracle
  FieldSpec field;
  int N = 10;
  int r = 8;
  std::size_t M = 100;  // samples; pairs for antithetic
  std::size_t P = 2000;
  std::uint64_t master_seed = 1;
  double tol = 1e-10;
  int n_ref = -1;
  int cutoff = -1;
  std::size_t pilot = 0;
  std::optional<std::vector<double>> rho;
  std::optional<double> sqs_tolerance;
  bool allow_odd = false;
  std::string cache_dir;
  std::string baseline_report;
  std::string output = "out";

  /// Every key, with defaults filled in, plus a "defaulted" list of the keys
  /// that were not given.
  nlohmann::json echo;
};

/// Throws ConfigurationError with a "field.path: message" text.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

struct ExperimentResult {
  EstimatorReport report;
  SampleTable table;
};

/// Dispatches to the estimator named by config.method (not "oracle").
ExperimentResult run_experiment(const ExperimentConfig& config);

/// report.json contents: the report plus the echoed config.
nlohmann::json report_document(const ExperimentConfig& config, const EstimatorReport& report);

struct OracleCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// 1D harmonic mean, 2D laminate and Voigt/Reuss ordering checks.
std::vector<OracleCheck> run_oracle_suite();

}  // namespace hvr
