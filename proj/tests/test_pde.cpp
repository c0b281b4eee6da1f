#include "hvr/pde.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <vector>

using namespace hvr;

namespace {

Eigen::MatrixXd dense(const DiscreteOperator& op) { return Eigen::MatrixXd(op.stiffness); }

std::vector<SmallMat> scalar_coefficients(const std::vector<double>& a, int dim) {
  std::vector<SmallMat> out;
  for (double v : a) out.push_back(scaled_identity(dim, v));
  return out;
}

}  // namespace

TEST_SUITE("pde") {
  TEST_CASE("1D periodic P1 stiffness matches hand assembly") {
    const Mesh mesh(1, 3, 2);  // 6 nodes, h = 1/2
    const std::vector<double> a = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    const Eigen::MatrixXd K = dense(assemble(mesh, scalar_coefficients(a, 1)));
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(6, 6);
    const double inv_h = 2.0;
    for (int e = 0; e < 6; ++e) {
      const int i = e, j = (e + 1) % 6;
      expected(i, i) += a[e] * inv_h;
      expected(j, j) += a[e] * inv_h;
      expected(i, j) -= a[e] * inv_h;
      expected(j, i) -= a[e] * inv_h;
    }
    CHECK((K - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("2D Q1 stencil for the Laplacian") {
    // Classic bilinear stencil: 8/3 centre, -1/3 for all eight neighbours.
    const Mesh mesh(2, 1, 4);
    const Eigen::MatrixXd K = dense(assemble(mesh, scalar_coefficients(std::vector<double>(16, 1.0), 2)));
    const int c = 1 * 4 + 1;
    CHECK(K(c, c) == doctest::Approx(8.0 / 3.0));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        CHECK(K(c, (1 + dy) * 4 + (1 + dx)) == doctest::Approx(-1.0 / 3.0));
      }
    CHECK(K(c, 3 * 4 + 3) == 0.0);
  }

  TEST_CASE("stiffness is symmetric with constants in its kernel") {
    const Mesh mesh(2, 2, 3);
    std::vector<SmallMat> coeff;
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
      SmallMat m(2, 2);
      m << 2.0 + static_cast<double>(e % 5), 0.3, 0.3, 1.0 + static_cast<double>(e % 3);
      coeff.push_back(m);
    }
    const Eigen::MatrixXd K = dense(assemble(mesh, coeff));
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((K * Eigen::VectorXd::Ones(K.rows())).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("non-coercive coefficients are rejected") {
    const Mesh mesh(1, 1, 2);
    CHECK_THROWS(assemble(mesh, scalar_coefficients({1.0, -1.0}, 1)));
  }

  TEST_CASE("constant flux gives a zero load on a periodic grid") {
    const Mesh mesh(2, 2, 2);
    QuadVectors f(mesh);
    SmallVec v(2);
    v << 1.5, -0.5;
    for (std::size_t e = 0; e < mesh.element_count(); ++e)
      for (int q = 0; q < 4; ++q) f.set(e, q, v);
    CHECK(load_from_flux(f).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("solve_periodic meets the tolerance and returns zero mean") {
    const Mesh mesh(2, 3, 4);
    std::vector<double> a(mesh.element_count());
    for (std::size_t e = 0; e < a.size(); ++e) a[e] = (e * 7) % 3 == 0 ? 20.0 : 3.0;
    const DiscreteOperator op = assemble(mesh, scalar_coefficients(a, 2));
    Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(mesh.node_count()), -1.0, 2.0);
    b.array() -= b.mean();
    SolveStats stats;
    const auto before = solve_count();
    const ScalarField x = solve_periodic(op, b, {1e-11, 0}, &stats);
    CHECK(solve_count() == before + 1);
    CHECK(std::abs(x.mean()) < 1e-12);
    const Eigen::VectorXd r = b - op.stiffness * x.values;
    CHECK(r.norm() / b.norm() <= 1e-11);
    CHECK(stats.residual <= 1e-11);
    CHECK(stats.iterations > 0);
  }

  TEST_CASE("inconsistent right-hand side is a consistency error") {
    const Mesh mesh(1, 2, 2);
    const DiscreteOperator op = assemble(mesh, scalar_coefficients({1, 1, 1, 1}, 1));
    CHECK_THROWS_AS(solve_periodic(op, Eigen::VectorXd::Ones(4)), ConsistencyError);
  }

  TEST_CASE("zero right-hand side gives the zero field") {
    const Mesh mesh(2, 1, 3);
    const DiscreteOperator op = assemble(mesh, scalar_coefficients(std::vector<double>(9, 2.0), 2));
    CHECK(solve_periodic(op, Eigen::VectorXd::Zero(9)).values.isZero(0.0));
  }

  TEST_CASE("iteration cap raises a solver error with the residual") {
    const Mesh mesh(2, 4, 4);
    const DiscreteOperator op = assemble(mesh, scalar_coefficients(std::vector<double>(256, 1.0), 2));
    Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(256, 0.0, 1.0);
    b.array() -= b.mean();
    try {
      solve_periodic(op, b, {1e-12, 1});
      FAIL("expected SolverError");
    } catch (const SolverError& e) {
      CHECK(e.residual() > 1e-12);
      CHECK(e.iterations() >= 1);
    }
  }

  TEST_CASE("gradient of a nodal ramp") {
    const Mesh mesh(2, 1, 4);
    ScalarField f{mesh, Eigen::VectorXd::Zero(16)};
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) f.values(y * 4 + x) = 0.25 * x + 0.5 * 0.25 * y;
    const QuadVectors g = gradient_at_quadrature(f);
    // elements not touching the periodic seam
    for (int ey = 0; ey < 3; ++ey)
      for (int ex = 0; ex < 3; ++ex)
        for (int q = 0; q < 4; ++q) {
          const SmallVec v = g.at(static_cast<std::size_t>(ey * 4 + ex), q);
          CHECK(v(0) == doctest::Approx(1.0));
          CHECK(v(1) == doctest::Approx(0.5));
        }
  }

  TEST_CASE("element coefficients follow the sub-grid") {
    UnitCell c;
    c.dim = 2;
    c.subgrid = 2;
    c.values = {scaled_identity(2, 1), scaled_identity(2, 2), scaled_identity(2, 3), scaled_identity(2, 4)};
    const FieldRealization f = tile(c, 1);
    const Mesh mesh(2, 1, 4);
    const auto coeff = element_coefficients(mesh, f);
    CHECK(coeff[0](0, 0) == 1.0);
    CHECK(coeff[3](0, 0) == 2.0);
    CHECK(coeff[3 * 4 + 0](0, 0) == 3.0);
    CHECK(coeff[3 * 4 + 3](0, 0) == 4.0);
    CHECK_THROWS_AS(element_coefficients(Mesh(2, 1, 3), f), ConfigurationError);
  }
}
