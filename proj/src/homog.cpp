#include "hvr/homog.hpp"

#include <cmath>

namespace hvr {

CellProblem make_cell_problem(const FieldRealization& field, int resolution) {
  CellProblem p;
  p.mesh = Mesh(field.dim, field.cells, resolution);
  p.coefficients = element_coefficients(p.mesh, field);
  p.op = assemble(p.mesh, p.coefficients);
  return p;
}

CorrectorSolution solve_corrector(const CellProblem& problem, int direction, const SolveOptions& options) {
  const Mesh& mesh = problem.mesh;
  if (direction < 0 || direction >= mesh.dim) throw ConfigurationError("corrector direction out of range");
  QuadVectors flux(mesh);
  for (std::size_t e = 0; e < mesh.element_count(); ++e) {
    const SmallVec ap = problem.coefficients[e].col(direction);
    for (int q = 0; q < mesh.quad_points(); ++q) flux.set(e, q, ap);
  }
  CorrectorSolution sol;
  sol.direction = direction;
  sol.potential = solve_periodic(problem.op, load_from_flux(flux), options, &sol.stats);
  sol.gradient = gradient_at_quadrature(sol.potential);
  return sol;
}

CorrectorSolution corrector(const FieldRealization& field, int resolution, int direction,
                            const SolveOptions& options) {
  return solve_corrector(make_cell_problem(field, resolution), direction, options);
}

SmallMat flux_integral(const CellProblem& problem, std::span<const CorrectorSolution> correctors) {
  const Mesh& mesh = problem.mesh;
  const int d = mesh.dim;
  const double w = mesh.quad_weight();
  SmallMat out = SmallMat::Zero(d, d);
  for (const auto& c : correctors) {
    const int j = c.direction;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
      const SmallMat& A = problem.coefficients[e];
      for (int q = 0; q < mesh.quad_points(); ++q) {
        SmallVec g = c.gradient.at(e, q);
        g(j) += 1.0;
        out.col(j) += w * (A * g);
      }
    }
  }
  return out;
}

SmallMat energy_integral(const CellProblem& problem, std::span<const CorrectorSolution> correctors) {
  const Mesh& mesh = problem.mesh;
  const int d = mesh.dim;
  const double w = mesh.quad_weight();
  SmallMat out = SmallMat::Zero(d, d);
  for (const auto& ci : correctors)
    for (const auto& cj : correctors) {
      double acc = 0.0;
      for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        const SmallMat& A = problem.coefficients[e];
        for (int q = 0; q < mesh.quad_points(); ++q) {
          SmallVec gi = ci.gradient.at(e, q);
          SmallVec gj = cj.gradient.at(e, q);
          gi(ci.direction) += 1.0;
          gj(cj.direction) += 1.0;
          acc += w * gi.dot(A * gj);
        }
      }
      out(ci.direction, cj.direction) = acc;
    }
  return out;
}

namespace {
HomogenizedMatrix homogenize_problem(const CellProblem& problem, const SolveOptions& options) {
  const int d = problem.mesh.dim;
  std::vector<CorrectorSolution> correctors;
  correctors.reserve(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) correctors.push_back(solve_corrector(problem, j, options));
  const double volume = std::pow(static_cast<double>(problem.mesh.cells), d);
  HomogenizedMatrix out;
  out.value = flux_integral(problem, correctors) / volume;
  const SmallMat energy = energy_integral(problem, correctors) / volume;
  out.energy_gap = max_abs_diff(out.value, energy);
  out.cells = problem.mesh.cells;
  return out;
}
}  // namespace

HomogenizedMatrix homogenized_matrix(const FieldRealization& field, int resolution, const SolveOptions& options) {
  HomogenizedMatrix out = homogenize_problem(make_cell_problem(field, resolution), options);
  out.provenance = Provenance::truncated;
  out.seed = field.seed;
  return out;
}

HomogenizedMatrix periodic_homogenize(const UnitCell& cell, int resolution, const SolveOptions& options) {
  HomogenizedMatrix out = homogenize_problem(make_cell_problem(tile(cell, 1), resolution), options);
  out.provenance = Provenance::periodic;
  return out;
}

double harmonic_mean_1d(std::span<const double> cells) {
  if (cells.empty()) throw DomainError("harmonic mean of an empty set");
  double inv = 0.0;
  for (double c : cells) {
    if (!(c > 0.0)) throw DomainError("harmonic mean requires positive values");
    inv += 1.0 / c;
  }
  return static_cast<double>(cells.size()) / inv;
}

HomogenizedMatrix voigt_bound(const FieldRealization& field) {
  SmallMat acc = SmallMat::Zero(field.dim, field.dim);
  for (const auto& m : field.values) acc += m;
  HomogenizedMatrix out;
  out.value = acc / static_cast<double>(field.values.size());
  out.provenance = Provenance::bound;
  out.cells = field.cells;
  out.seed = field.seed;
  return out;
}

HomogenizedMatrix reuss_bound(const FieldRealization& field) {
  SmallMat acc = SmallMat::Zero(field.dim, field.dim);
  for (const auto& m : field.values) {
    if (!(min_eigenvalue(m) > 0.0)) throw DomainError("Reuss bound requires coercive cell matrices");
    acc += m.inverse();
  }
  HomogenizedMatrix out;
  out.value = (acc / static_cast<double>(field.values.size())).inverse();
  out.provenance = Provenance::bound;
  out.cells = field.cells;
  out.seed = field.seed;
  return out;
}

SmallVec matrix_eigenvalues(const SmallMat& m) {
  if (m.rows() == 1) {
    SmallVec v(1);
    v(0) = m(0, 0);
    return v;
  }
  const double mid = 0.5 * (m(0, 0) + m(1, 1));
  const double rad = std::hypot(0.5 * (m(0, 0) - m(1, 1)), 0.5 * (m(0, 1) + m(1, 0)));
  SmallVec v(2);
  v(0) = mid - rad;
  v(1) = mid + rad;
  return v;
}

}  // namespace hvr
