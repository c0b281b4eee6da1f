#include "hvr/homog.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <vector>

using namespace hvr;

namespace {

std::vector<double> bernoulli_cells(std::uint64_t seed, std::size_t n, double a, double b) {
  Stream s(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = s.uniform() < 0.5 ? a : b;
  return v;
}

}  // namespace

TEST_SUITE("homog") {
  TEST_CASE("1D homogenized coefficient is the harmonic mean") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto cells = bernoulli_cells(seed, 8, 3.0, 20.0);
      double inv = 0.0;
      for (double c : cells) inv += 1.0 / c;
      const double a = homogenized_matrix(field_from_scalars(1, 8, cells), 3).value(0, 0);
      CHECK(a == doctest::Approx(8.0 / inv).epsilon(1e-10));
      CHECK(harmonic_mean_1d(cells) == doctest::Approx(8.0 / inv).epsilon(1e-14));
    }
  }

  TEST_CASE("laminates give harmonic and arithmetic means") {
    const std::vector<double> layers_x = {1.0, 4.0, 1.0, 4.0};  // varies along x
    const SmallMat a = homogenized_matrix(field_from_scalars(2, 2, layers_x), 16).value;
    CHECK(a(0, 0) == doctest::Approx(1.6).epsilon(1e-8));
    CHECK(a(1, 1) == doctest::Approx(2.5).epsilon(1e-8));
    CHECK(std::abs(a(0, 1)) < 1e-8);
    const std::vector<double> layers_y = {1.0, 1.0, 4.0, 4.0};  // varies along y
    const SmallMat b = homogenized_matrix(field_from_scalars(2, 2, layers_y), 16).value;
    CHECK(b(0, 0) == doctest::Approx(2.5).epsilon(1e-8));
    CHECK(b(1, 1) == doctest::Approx(1.6).epsilon(1e-8));
  }

  TEST_CASE("constant coefficients homogenize to themselves with zero correctors") {
    SmallMat m(2, 2);
    m << 2.0, 0.5, 0.5, 1.0;
    const FieldRealization f = field_from_cells(2, 3, std::vector<SmallMat>(9, m));
    const HomogenizedMatrix a = homogenized_matrix(f, 4);
    CHECK(max_abs_diff(a.value, m) < 1e-12);
    CHECK(a.provenance == Provenance::truncated);
    const CorrectorSolution w = corrector(f, 4, 0);
    CHECK(w.potential.values.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(max_abs_diff(periodic_homogenize(UnitCell::constant(m, 2), 4).value, m) < 1e-12);
  }

  TEST_CASE("periodic checkerboard approaches the geometric mean") {
    // Two-phase checkerboard in 2D: A* = sqrt(a b) Id.
    UnitCell c;
    c.dim = 2;
    c.subgrid = 2;
    c.values = {scaled_identity(2, 1.0), scaled_identity(2, 4.0), scaled_identity(2, 4.0), scaled_identity(2, 1.0)};
    const HomogenizedMatrix a = periodic_homogenize(c, 32);
    CHECK(a.provenance == Provenance::periodic);
    CHECK(a.value(0, 0) == doctest::Approx(2.0).epsilon(0.02));
    CHECK(a.value(1, 1) == doctest::Approx(a.value(0, 0)).epsilon(1e-8));
  }

  TEST_CASE("random draws: symmetric, energy matches flux, zero-mean corrector") {
    const auto cells = bernoulli_cells(4, 25, 3.0, 20.0);
    const FieldRealization f = field_from_scalars(2, 5, cells);
    const HomogenizedMatrix a = homogenized_matrix(f, 4);
    CHECK(std::abs(a.value(0, 1) - a.value(1, 0)) < 1e-8);
    CHECK(a.energy_gap < 1e-8);
    const CorrectorSolution w = corrector(f, 4, 1);
    CHECK(std::abs(w.potential.mean()) < 1e-12);
    CHECK(w.stats.residual <= 1e-10);
  }

  TEST_CASE("transposing the field swaps the diagonal") {
    const auto cells = bernoulli_cells(9, 16, 1.0, 10.0);
    std::vector<double> t(16);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) t[static_cast<std::size_t>(x * 4 + y)] = cells[static_cast<std::size_t>(y * 4 + x)];
    const SmallMat a = homogenized_matrix(field_from_scalars(2, 4, cells), 4).value;
    const SmallMat b = homogenized_matrix(field_from_scalars(2, 4, t), 4).value;
    CHECK(a(0, 0) == doctest::Approx(b(1, 1)).epsilon(1e-9));
    CHECK(a(1, 1) == doctest::Approx(b(0, 0)).epsilon(1e-9));
  }

  TEST_CASE("Reuss <= A*_N <= Voigt in the quadratic-form order") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const FieldRealization f = field_from_scalars(2, 4, bernoulli_cells(100 + seed, 16, 3.0, 20.0));
      const SmallMat a = homogenized_matrix(f, 4).value;
      const SmallMat sym = 0.5 * (a + a.transpose());
      CHECK(min_eigenvalue(voigt_bound(f).value - sym) >= -1e-8);
      CHECK(min_eigenvalue(sym - reuss_bound(f).value) >= -1e-8);
    }
  }

  TEST_CASE("bounds are the arithmetic and harmonic means") {
    const std::vector<double> v = {1.0, 4.0, 4.0, 1.0};
    const FieldRealization f = field_from_scalars(2, 2, v);
    CHECK(voigt_bound(f).value(0, 0) == doctest::Approx(2.5));
    CHECK(reuss_bound(f).value(1, 1) == doctest::Approx(1.6));
    CHECK(voigt_bound(f).provenance == Provenance::bound);
  }

  TEST_CASE("closed-form eigenvalues agree with a dense solver") {
    SmallMat m(2, 2);
    m << 3.0, 1.2, 1.2, 0.5;
    const SmallVec ev = matrix_eigenvalues(m);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es{Eigen::Matrix2d(m)};
    CHECK(ev(0) == doctest::Approx(es.eigenvalues()(0)));
    CHECK(ev(1) == doctest::Approx(es.eigenvalues()(1)));
    CHECK(ev(0) <= ev(1));
  }

  TEST_CASE("harmonic mean rejects bad input") {
    CHECK_THROWS_AS(harmonic_mean_1d(std::vector<double>{}), DomainError);
    CHECK_THROWS_AS(harmonic_mean_1d(std::vector<double>{1.0, 0.0}), DomainError);
  }
}
