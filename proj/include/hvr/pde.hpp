#pragma once

#include "hvr/common.hpp"
#include "hvr/rfield.hpp"

#include <Eigen/Sparse>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace hvr {

/// Uniform periodic grid on Q_N = (0,N)^d with r elements per unit-cell side.
/// P1 elements in 1D, Q1 in 2D. Nodes on opposite faces are identified, so
/// there are (N r)^d nodes and (N r)^d elements, both numbered x-fastest.
struct Mesh {
  int dim = 2;
  int cells = 1;
  int resolution = 8;

  Mesh() = default;
  Mesh(int dim, int cells, int resolution);

  int per_side() const { return cells * resolution; }
  std::size_t node_count() const;
  std::size_t element_count() const { return node_count(); }
  double h() const { return 1.0 / resolution; }
  /// 1 midpoint in 1D, 2x2 Gauss in 2D.
  int quad_points() const { return dim == 1 ? 1 : 4; }
  double quad_weight() const { return dim == 1 ? h() : 0.25 * h() * h(); }
  int nodes_per_element() const { return dim == 1 ? 2 : 4; }
  std::array<std::size_t, 4> element_nodes(std::size_t e) const;
  /// Reference-element gradient of local shape function a at quadrature point q.
  SmallVec shape_gradient(int a, int q) const;
  /// Unit cell (kx, ky) holding element e.
  std::array<int, 2> element_cell(std::size_t e) const;
};

struct ScalarField {
  Mesh mesh;
  Eigen::VectorXd values;
  double mean() const { return values.size() == 0 ? 0.0 : values.mean(); }
};

/// One d-vector per (element, quadrature point).
struct QuadVectors {
  Mesh mesh;
  Eigen::VectorXd data;

  explicit QuadVectors(const Mesh& m);
  QuadVectors() = default;
  SmallVec at(std::size_t e, int q) const;
  void set(std::size_t e, int q, const SmallVec& v);
  void add(std::size_t e, int q, const SmallVec& v);

 private:
  std::size_t offset(std::size_t e, int q) const {
    return (e * static_cast<std::size_t>(mesh.quad_points()) + static_cast<std::size_t>(q)) *
           static_cast<std::size_t>(mesh.dim);
  }
};

struct DiscreteOperator {
  Mesh mesh;
  Eigen::SparseMatrix<double, Eigen::RowMajor> stiffness;
  Eigen::VectorXd diagonal;
};

/// Per-element coefficients of a field; requires r to be a multiple of the
/// field's sub-grid.
std::vector<SmallMat> element_coefficients(const Mesh& mesh, const FieldRealization& field);

DiscreteOperator assemble(const Mesh& mesh, std::span<const SmallMat> coefficients);

/// Load vector of -div(F) = ... in weak form: b_i = -sum_e sum_q w grad(theta_i) . F(e, q).
Eigen::VectorXd load_from_flux(const QuadVectors& flux);

struct SolveOptions {
  double tol = 1e-10;               // relative residual
  std::size_t max_iterations = 0;   // 0: 50 sqrt(nodes) + 1000
};

struct SolveStats {
  std::size_t iterations = 0;
  double residual = 0.0;  // true relative residual ||b - K x|| / ||b||
};

/// Zero-mean solution of the singular periodic system. Throws ConsistencyError
/// if rhs is not orthogonal to constants and SolverError on non-convergence.
ScalarField solve_periodic(const DiscreteOperator& op, const Eigen::VectorXd& rhs, const SolveOptions& options = {},
                           SolveStats* stats = nullptr);

QuadVectors gradient_at_quadrature(const ScalarField& field);

/// Process-wide count of solve_periodic calls; estimators use it for cost checks.
std::uint64_t solve_count();

}  // namespace hvr
