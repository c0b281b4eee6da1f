#pragma once

#include "hvr/common.hpp"
#include "hvr/pde.hpp"
#include "hvr/rfield.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace hvr {

enum class Provenance { periodic, truncated, estimated, bound };

struct HomogenizedMatrix {
  SmallMat value;
  Provenance provenance = Provenance::truncated;
  int cells = 0;
  std::uint64_t seed = 0;
  /// max |flux form - energy form|, the discrete Galerkin-orthogonality check.
  double energy_gap = 0.0;
};

struct CorrectorSolution {
  int direction = 0;  // 0-based canonical direction
  ScalarField potential;
  QuadVectors gradient;
  SolveStats stats;
};

/// Assembled periodic problem for one coefficient field; the d corrector
/// solves share it.
struct CellProblem {
  Mesh mesh;
  std::vector<SmallMat> coefficients;  // per element
  DiscreteOperator op;
};

CellProblem make_cell_problem(const FieldRealization& field, int resolution);

/// Solves -div(A(e_i + grad w)) = 0 with Q_N-periodic, zero-mean w.
CorrectorSolution solve_corrector(const CellProblem& problem, int direction, const SolveOptions& options = {});

CorrectorSolution corrector(const FieldRealization& field, int resolution, int direction,
                            const SolveOptions& options = {});

/// Unnormalized flux integrals: entry (i, j) = int_{Q_N} e_i . A (e_j + grad w_j).
SmallMat flux_integral(const CellProblem& problem, std::span<const CorrectorSolution> correctors);
/// Unnormalized energies: entry (i, j) = int (e_i + grad w_i) . A (e_j + grad w_j).
SmallMat energy_integral(const CellProblem& problem, std::span<const CorrectorSolution> correctors);

/// Truncated homogenized matrix A*_N of one realization.
HomogenizedMatrix homogenized_matrix(const FieldRealization& field, int resolution, const SolveOptions& options = {});

/// Periodic homogenized matrix of a unit cell (a field with N = 1).
HomogenizedMatrix periodic_homogenize(const UnitCell& cell, int resolution, const SolveOptions& options = {});

/// (mean of reciprocals)^-1; throws DomainError on non-positive input.
double harmonic_mean_1d(std::span<const double> cells);

HomogenizedMatrix voigt_bound(const FieldRealization& field);
HomogenizedMatrix reuss_bound(const FieldRealization& field);

/// Ascending eigenvalues of a symmetric 1x1 or 2x2 matrix.
SmallVec matrix_eigenvalues(const SmallMat& m);

}  // namespace hvr
