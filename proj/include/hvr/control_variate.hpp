#pragma once

#include "hvr/homog.hpp"
#include "hvr/mc.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hvr {

/// Lattice offset (x, y); y is ignored in 1D.
using Offset = std::array<int, 2>;

/// Representative of {l, -l} modulo N: both reduced to [0, N)^d, the
/// lexicographically smaller one is returned.
Offset canonical_offset(Offset l, int N, int dim);
/// Periodic Chebyshev length of l on the torus Z_N^d.
int periodic_norm(Offset l, int N, int dim);
/// Canonical nonzero offsets with periodic_norm <= cutoff, sorted.
std::vector<Offset> offsets_within(int N, int dim, int cutoff);

/// Deterministic defect data for the Bernoulli perturbation
/// A = A_per + B_k C_per. Coefficients are stored as unnormalized integrals
/// over Q_N (so one_defect = |Q_N| (A*_{N,1 defect} - A*_per)); the 1/|Q_N|
/// factor is applied once, when the controls are built.
struct DefectCoefficients {
  int dim = 2;
  int N = 0;
  int r = 0;
  UnitCell a_per;
  UnitCell c_per;
  SmallMat a_per_star;
  SmallMat one_defect;
  int cutoff = -1;  // -1: no pair table
  std::map<Offset, SmallMat> two_defect;  // keyed by canonical offset
  std::uint64_t precompute_solves = 0;
};

/// int_{Q_N} (A_per + 1_{Q+k} C_per)(grad w^N + e_i) - A_per (grad w^0 + e_i),
/// with the defect at cell `position`.
SmallMat one_defect_coefficient(const UnitCell& a_per, const UnitCell& c_per, int N, int r, Offset position = {0, 0},
                                const SolveOptions& options = {});

/// Pair-interaction surplus D_l: the same integral for defects at 0 and l,
/// minus twice the one-defect value.
SmallMat two_defect_coefficient(const UnitCell& a_per, const UnitCell& c_per, int N, int r, Offset l,
                                const SolveOptions& options = {});

/// order 1: A*_per and the one-defect value; order 2 adds D_l for every offset
/// within the cutoff (cutoff < 0 means N / 2, which covers the whole box).
DefectCoefficients build_defect_table(const UnitCell& a_per, const UnitCell& c_per, int N, int r, int order,
                                      int cutoff = -1, const SolveOptions& options = {});

/// Load a cached table if its key matches, compute what is missing, write it back.
DefectCoefficients cached_defect_table(const std::string& path, const UnitCell& a_per, const UnitCell& c_per, int N,
                                       int r, int order, int cutoff = -1, const SolveOptions& options = {});

nlohmann::json defect_table_to_json(const DefectCoefficients& table);
DefectCoefficients defect_table_from_json(const nlohmann::json& j);

/// Closed-form E[Y1] (order 1) or E[Y2] (order 2) under i.i.d. Bernoulli(eta_b) cells.
SmallMat control_expectation(double eta_b, const DefectCoefficients& table, int order);

struct Controls {
  SmallMat y1;
  SmallMat y2;  // empty at order 1
};

/// Y1 = A*_per + |Q_N|^-1 sum_k B_k one_defect,
/// Y2 = |Q_N|^-1 sum_{k<j} B_k B_j D_{j-k}. No PDE solves.
Controls evaluate_controls(std::span<const double> b_values, const DefectCoefficients& table, int order);

struct RhoFit {
  std::vector<double> rho;
  bool degenerate = false;
};

/// Variance-minimizing regression coefficients of x on the controls:
/// rho = Cov(Y)^-1 Cov(Y, x). y[m] holds the control tuple of sample m.
/// Constant controls get rho = 0; a singular covariance gives all zeros.
/// Both cases set the degeneracy flag.
RhoFit optimal_rho(std::span<const double> x, const std::vector<std::vector<double>>& y);

struct CvOptions {
  int order = 1;
  int cutoff = -1;
  /// Fixed rho for every entry and control (e.g. {0.0} reproduces plain MC).
  std::optional<std::vector<double>> fixed_rho;
  /// > 0: rho fitted on the first `pilot` samples, estimate from the rest.
  std::size_t pilot = 0;
  std::string cache_path;  // empty: no defect-table cache
  SolveOptions solver;
};

/// Control-variate estimator for the Bernoulli perturbation law. Entries of
/// the sample table hold raw A*_N; aux columns hold y1_ij, y2_ij and the
/// controlled values cv_ij, which are the estimator samples.
std::pair<EstimatorReport, SampleTable> run_cv(const FieldSpec& spec, int N, int r, std::size_t M,
                                               std::uint64_t master_seed, const CvOptions& options = {});

}  // namespace hvr
