#include "hvr/antithetic.hpp"

#include <doctest.h>

#include <cmath>

using namespace hvr;

namespace {

FieldSpec checkerboard(int dim) {
  FieldSpec s;
  s.dim = dim;
  s.law = TwoStateLaw{3.0, 20.0, 0.5};
  return s;
}

}  // namespace

TEST_SUITE("antithetic") {
  TEST_CASE("pair average is the entrywise mean") {
    HomogenizedMatrix a, b;
    a.value = scaled_identity(2, 2.0);
    b.value = scaled_identity(2, 4.0);
    b.energy_gap = 1e-9;
    const HomogenizedMatrix c = pair_average(a, b);
    CHECK(c.value(0, 0) == 3.0);
    CHECK(c.value(0, 1) == 0.0);
    CHECK(c.provenance == Provenance::estimated);
    CHECK(c.energy_gap == 1e-9);
  }

  TEST_CASE("each pair solves a draw and its mirror") {
    const AntitheticSample s = antithetic_sample(checkerboard(2), 3, 4, 7, 2);
    Stream stream = Stream::split(7, 2);
    const FieldRealization a = draw_field(checkerboard(2), 3, stream);
    const FieldRealization b = antithetic_of(a);
    CHECK(max_abs_diff(s.a.value, homogenized_matrix(a, 4).value) == 0.0);
    CHECK(max_abs_diff(s.b.value, homogenized_matrix(b, 4).value) == 0.0);
  }

  TEST_CASE("report counts 2 d solves per pair and averages the pairs") {
    const auto [report, table] = run_antithetic(checkerboard(2), 3, 4, 6, 11);
    CHECK(report.corrector_solves == 2 * 2 * 6);
    CHECK(report.M == 6);
    CHECK(report.method == "antithetic");
    const auto avg = table.estimator_samples();
    for (std::size_t m = 0; m < 6; ++m) {
      const SmallMat& a = table.rows[m].entries;
      SmallMat b(2, 2);
      b << table.rows[m].aux[0], table.rows[m].aux[1], table.rows[m].aux[2], table.rows[m].aux[3];
      CHECK(max_abs_diff(avg[m], 0.5 * (a + b)) < 1e-15);
    }
  }

  TEST_CASE("1D pair estimator is exactly unbiased under full enumeration") {
    const int N = 6;
    double exact = 0.0, pairs = 0.0;
    PerturbationSpec p;
    p.c0 = scaled_identity(1, 3.0);
    p.c1 = UnitCell::constant(scaled_identity(1, 17.0), 1);
    p.eta = 1.0;
    p.x_law = XLaw::bernoulli01;
    for (int mask = 0; mask < (1 << N); ++mask) {
      std::vector<double> x(N);
      double inv = 0.0;
      for (int k = 0; k < N; ++k) {
        x[static_cast<std::size_t>(k)] = mask >> k & 1;
        inv += 1.0 / (3.0 + 17.0 * x[static_cast<std::size_t>(k)]);
      }
      exact += (N / inv) / (1 << N);
      const FieldRealization a = realize_perturbation(p, x, N);
      const HomogenizedMatrix avg =
          pair_average(homogenized_matrix(a, 2), homogenized_matrix(antithetic_of(a), 2));
      pairs += avg.value(0, 0) / (1 << N);
    }
    CHECK(std::abs(pairs - exact) < 1e-10);
  }

  TEST_CASE("antithetic partners are negatively correlated on the checkerboard") {
    const auto [report, table] = run_antithetic(checkerboard(2), 4, 4, 20, 3);
    CHECK(report.extras.at("pair_correlation_11").get<double>() < 0.0);
  }
}
