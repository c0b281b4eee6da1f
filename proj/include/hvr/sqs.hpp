#pragma once

#include "hvr/homog.hpp"
#include "hvr/mc.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hvr {

/// Coefficients of A*_N = A0 + eta A1 + eta^2 A2 + o(eta^2) for one
/// configuration, with the fields behind them (one per direction).
struct ExpansionTerms {
  SmallMat a0;
  SmallMat a1;
  SmallMat a2;
  std::vector<ScalarField> w0;
  std::vector<ScalarField> u1;
  std::vector<ScalarField> u2;
};

/// Solves the cascade
///   -div C0 (p + grad w0) = 0,
///   -div C0 grad u1 = div[chi C1 (p + grad w0)],
///   -div C0 grad u2 = div[chi C1 grad u1],
/// with chi = x_k on cell k, and evaluates the three averages.
ExpansionTerms expansion_terms(const PerturbationSpec& spec, std::span<const double> x_values, int N, int r,
                               const SolveOptions& options = {});

/// Pair quantities for the second-order condition. Column p of each matrix is
/// the integral of C1 grad phi_p over one cell, where phi_p is the periodic
/// response to a single-cell source div(1_Q C1 e_p).
struct SqsTables {
  int dim = 2;
  int N = 0;
  int r = 0;
  int n_ref = 0;
  SmallMat c0;
  UnitCell c1;
  std::vector<SmallMat> offsets;  // I_{0,l}, l linear x-fastest in Z_N^d
  SmallMat offset_sum;            // sum over all l, monitored
  SmallMat i_infinity;            // I_{0,0} on the N_ref box
  int n_coarse = 0;               // box used for the error estimate
  double i_infinity_error = 0.0;  // max |I(N_ref) - I(n_coarse)|
  std::uint64_t precompute_solves = 0;

  /// Directions ranked by the second-order residual (just e_1 for isotropic data).
  std::vector<int> ranked_directions() const;
};

/// I_{0,l} on a box of side n (one solve per direction).
std::vector<SmallMat> pair_integrals(const SmallMat& c0, const UnitCell& c1, int n, int r,
                                     const SolveOptions& options = {});

/// n_ref < 0 means 3 N.
SqsTables build_sqs_tables(const PerturbationSpec& spec, int N, int r, int n_ref = -1,
                           const SolveOptions& options = {});
nlohmann::json sqs_tables_to_json(const SqsTables& tables);
SqsTables sqs_tables_from_json(const nlohmann::json& j);
/// Reuses the file when its key (C0, C1, N, r, N_ref) matches, otherwise rebuilds it.
SqsTables cached_sqs_tables(const std::string& path, const PerturbationSpec& spec, int N, int r, int n_ref = -1,
                            const SolveOptions& options = {});

/// (1/|Q_N|) sum_k x_k.
double sqs1_residual(std::span<const double> x_values);

/// |(1/|Q_N|) sum_{k,j} x_k x_j I_{0,j-k} - I_inf| on the ranked directions
/// (worst one reported). Var(X_0) = 1 for the +-1 law.
double sqs2_residual(std::span<const double> x_values, const SqsTables& tables);

struct SqsConfiguration {
  std::size_t index = 0;  // pool index
  std::uint64_t seed = 0;
  std::vector<double> x_values;
  double sqs1 = 0.0;
  double sqs2 = 0.0;
  bool balanced = true;  // false in minimal-residual mode
};

/// Uniformly shuffled multiset of N^d/2 values +1 and N^d/2 values -1.
/// N^d odd throws ConfigurationError unless allow_odd, in which case the
/// extra value takes a fair random sign and balanced is false.
SqsConfiguration sample_exact_sqs1(int N, int dim, Stream& stream, bool allow_odd = false);

struct SelectionOptions {
  std::size_t pool = 2000;
  /// Set: keep the first `keep` pool members (by index) with residual <= tolerance.
  std::optional<double> tolerance;
  bool allow_odd = false;
};

/// Draws the pool from Stream::split(master_seed, i), ranks by sqs2 residual
/// (stable, earlier index wins ties) and keeps the `keep` smallest.
std::vector<SqsConfiguration> select_sqs2(int N, int dim, std::uint64_t master_seed, std::size_t keep,
                                          const SqsTables& tables, const SelectionOptions& options = {});

struct SqsOptions {
  int order = 1;
  SelectionOptions selection;
  int n_ref = -1;
  std::string cache_path;
  /// Plain MC report on the same law, used for the bias indicator.
  std::optional<EstimatorReport> baseline;
  SolveOptions solver;
};

/// Selection Monte Carlo: M configurations, exact-SQS1 (order 1) or the
/// best-of-pool SQS2 selection (order 2), each solved at the full amplitude.
std::pair<EstimatorReport, SampleTable> run_sqs(const FieldSpec& spec, int N, int r, std::size_t M,
                                                std::uint64_t master_seed, const SqsOptions& options = {});

}  // namespace hvr
