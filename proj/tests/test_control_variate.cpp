#include "hvr/control_variate.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

using namespace hvr;

namespace {

UnitCell iso(int dim, double v) { return UnitCell::constant(scaled_identity(dim, v), dim); }

FieldSpec bernoulli_spec(int dim, double a_per, double c_per, double eta_b) {
  PerturbationSpec p;
  p.c0 = scaled_identity(dim, a_per);
  p.c1 = iso(dim, c_per);
  p.eta = 1.0;
  p.x_law = XLaw::bernoulli01;
  p.eta_b = eta_b;
  FieldSpec s;
  s.dim = dim;
  s.law = p;
  return s;
}

double harmonic(const std::vector<double>& v) {
  double inv = 0.0;
  for (double x : v) inv += 1.0 / x;
  return static_cast<double>(v.size()) / inv;
}

}  // namespace

TEST_SUITE("control_variate") {
  TEST_CASE("1D one-defect coefficient is 4/7") {
    // N H({2,1,1,1}) - N = 32/7 - 4
    const SmallMat a = one_defect_coefficient(iso(1, 1.0), iso(1, 1.0), 4, 2);
    CHECK(a(0, 0) == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  }

  TEST_CASE("zero perturbation gives zero defect coefficients") {
    CHECK(one_defect_coefficient(iso(2, 2.0), iso(2, 0.0), 3, 2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(two_defect_coefficient(iso(2, 2.0), iso(2, 0.0), 3, 2, {1, 0}).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("one-defect coefficient does not depend on the defect position") {
    const SmallMat a = one_defect_coefficient(iso(2, 3.0), iso(2, 20.0), 4, 4, {0, 0});
    const SmallMat b = one_defect_coefficient(iso(2, 3.0), iso(2, 20.0), 4, 4, {1, 1});
    CHECK(max_abs_diff(a, b) < 1e-8);
  }

  TEST_CASE("1D pair surplus is 4/21 for every offset") {
    // N H({2,2,1,1}) - N - 2 (4/7) = 16/3 - 4 - 8/7
    for (int l = 1; l < 4; ++l)
      CHECK(two_defect_coefficient(iso(1, 1.0), iso(1, 1.0), 4, 2, {l, 0})(0, 0) ==
            doctest::Approx(4.0 / 21.0).epsilon(1e-10));
  }

  TEST_CASE("pair surplus is symmetric under l -> -l") {
    const SmallMat a = two_defect_coefficient(iso(2, 3.0), iso(2, 20.0), 5, 2, {1, 2});
    const SmallMat b = two_defect_coefficient(iso(2, 3.0), iso(2, 20.0), 5, 2, {-1, -2});
    CHECK(max_abs_diff(a, b) < 1e-8);
  }

  TEST_CASE("2D pair surplus decays with the separation") {
    double previous = INFINITY;
    for (int l = 1; l <= 4; ++l) {
      const double size = two_defect_coefficient(iso(2, 3.0), iso(2, 20.0), 8, 2, {l, 0}).cwiseAbs().maxCoeff();
      MESSAGE("|D_(" << l << ",0)| = " << size);
      CHECK(size <= previous);
      previous = size;
    }
  }

  TEST_CASE("canonical offsets") {
    CHECK(offsets_within(10, 2, 5).size() == 51);
    CHECK(offsets_within(10, 1, 5).size() == 5);
    CHECK(offsets_within(10, 2, 1).size() == 4);
    for (int x = -7; x < 7; ++x)
      for (int y = -7; y < 7; ++y) {
        CHECK(canonical_offset({x, y}, 5, 2) == canonical_offset({-x, -y}, 5, 2));
        CHECK(periodic_norm({x, y}, 5, 2) == periodic_norm({-x, -y}, 5, 2));
      }
    CHECK(periodic_norm({7, -1}, 10, 2) == 3);
  }

  TEST_CASE("control expectation at degenerate laws") {
    const DefectCoefficients t = build_defect_table(iso(2, 3.0), iso(2, 20.0), 3, 2, 1);
    CHECK(max_abs_diff(control_expectation(0.0, t, 1), t.a_per_star) == 0.0);
    CHECK(max_abs_diff(control_expectation(1.0, t, 1), t.a_per_star + t.one_defect) < 1e-15);
    CHECK(max_abs_diff(t.a_per_star, scaled_identity(2, 3.0)) < 1e-12);
    CHECK_THROWS_AS(control_expectation(0.5, t, 2), ConfigurationError);
  }

  TEST_CASE("missing pair offsets are named") {
    DefectCoefficients t = build_defect_table(iso(2, 3.0), iso(2, 20.0), 4, 2, 2);
    t.two_defect.erase({1, 0});
    try {
      control_expectation(0.5, t, 2);
      FAIL("expected ConfigurationError");
    } catch (const ConfigurationError& e) {
      CHECK(std::string(e.what()).find("(1,0)") != std::string::npos);
    }
  }

  TEST_CASE("closed-form control expectations match cheap sampling") {
    const DefectCoefficients t = build_defect_table(iso(2, 3.0), iso(2, 20.0), 4, 2, 2);
    const double eta_b = 0.3;
    const int draws = 10000;
    const auto before = solve_count();
    std::vector<SmallMat> y1, y2;
    for (int m = 0; m < draws; ++m) {
      Stream s = Stream::split(3, static_cast<std::uint64_t>(m));
      std::vector<double> b(16);
      for (auto& v : b) v = s.uniform() < eta_b ? 1.0 : 0.0;
      const Controls c = evaluate_controls(b, t, 2);
      y1.push_back(c.y1);
      y2.push_back(c.y2);
    }
    CHECK(solve_count() == before);
    const SampleStats s1 = sample_stats(y1), s2 = sample_stats(y2);
    const SmallMat e1 = control_expectation(eta_b, t, 1), e2 = control_expectation(eta_b, t, 2);
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(s1.mean(i, i) - e1(i, i)) <= 3.0 * std::sqrt(s1.variance(i, i) / draws));
      CHECK(std::abs(s2.mean(i, i) - e2(i, i)) <= 3.0 * std::sqrt(s2.variance(i, i) / draws));
    }
  }

  TEST_CASE("fixed-rho estimator is exactly unbiased: 1D enumeration") {
    const int N = 8;
    const double eta_b = 0.3;
    const DefectCoefficients t = build_defect_table(iso(1, 1.0), iso(1, 2.0), N, 2, 2);
    const SmallMat e1 = control_expectation(eta_b, t, 1), e2 = control_expectation(eta_b, t, 2);
    double raw = 0.0, controlled = 0.0, ey1 = 0.0, ey2 = 0.0;
    for (int mask = 0; mask < (1 << N); ++mask) {
      std::vector<double> b(N), a(N);
      int ones = 0;
      for (int k = 0; k < N; ++k) {
        b[static_cast<std::size_t>(k)] = mask >> k & 1;
        ones += mask >> k & 1;
        a[static_cast<std::size_t>(k)] = 1.0 + 2.0 * b[static_cast<std::size_t>(k)];
      }
      const double w = std::pow(eta_b, ones) * std::pow(1 - eta_b, N - ones);
      const Controls c = evaluate_controls(b, t, 2);
      const double x = harmonic(a);
      raw += w * x;
      ey1 += w * c.y1(0, 0);
      ey2 += w * c.y2(0, 0);
      controlled += w * (x - 0.7 * (c.y1(0, 0) - e1(0, 0)) - 0.4 * (c.y2(0, 0) - e2(0, 0)));
    }
    CHECK(ey1 == doctest::Approx(e1(0, 0)).epsilon(1e-12));
    CHECK(ey2 == doctest::Approx(e2(0, 0)).epsilon(1e-12));
    CHECK(std::abs(controlled - raw) < 1e-12);
  }

  TEST_CASE("first-order expansion remainder decays superlinearly") {
    const int N = 6;
    const DefectCoefficients t = build_defect_table(iso(1, 1.0), iso(1, 1.0), N, 2, 1);
    std::vector<double> rem;
    for (double eta : {0.04, 0.02, 0.01}) {
      double mean = 0.0;
      for (int mask = 0; mask < (1 << N); ++mask) {
        std::vector<double> a(N);
        int ones = 0;
        for (int k = 0; k < N; ++k) {
          ones += mask >> k & 1;
          a[static_cast<std::size_t>(k)] = 1.0 + (mask >> k & 1);
        }
        mean += std::pow(eta, ones) * std::pow(1 - eta, N - ones) * harmonic(a);
      }
      rem.push_back(std::abs(mean - control_expectation(eta, t, 1)(0, 0)));
    }
    CHECK(rem[0] / rem[1] > 3.0);
    CHECK(rem[1] / rem[2] > 3.0);
  }

  TEST_CASE("optimal rho on hand data") {
    const std::vector<double> x = {1, 2, 3};
    RhoFit fit = optimal_rho(x, {{2}, {4}, {6}});
    CHECK(fit.rho[0] == doctest::Approx(0.5));
    CHECK_FALSE(fit.degenerate);
    fit = optimal_rho(x, {{1}, {2}, {3}});
    CHECK(fit.rho[0] == doctest::Approx(1.0));
    fit = optimal_rho(x, {{5}, {5}, {5}});
    CHECK(fit.degenerate);
    CHECK(fit.rho[0] == 0.0);
    fit = optimal_rho(x, {{1, 2}, {2, 4}, {3, 6}});
    CHECK(fit.degenerate);
    CHECK(fit.rho == std::vector<double>{0.0, 0.0});
    CHECK_THROWS_AS(optimal_rho(std::vector<double>{1.0}, {{1.0}}), ConfigurationError);
  }

  TEST_CASE("optimal rho of an independent control is near zero") {
    Stream s(12);
    std::vector<double> x;
    std::vector<std::vector<double>> y;
    for (int i = 0; i < 20000; ++i) {
      x.push_back(s.uniform());
      y.push_back({s.uniform()});
    }
    CHECK(std::abs(optimal_rho(x, y).rho[0]) < 0.05);
  }

  TEST_CASE("rho forced to zero reproduces plain MC") {
    const FieldSpec spec = bernoulli_spec(2, 3.0, 20.0, 0.5);
    CvOptions o;
    o.fixed_rho = std::vector<double>{0.0};
    const auto [cv, cv_table] = run_cv(spec, 3, 2, 8, 4, o);
    const auto [mc, mc_table] = run_mc(spec, 3, 2, 8, 4);
    CHECK(max_abs_diff(cv.mean, mc.mean) == 0.0);
    CHECK(max_abs_diff(cv.variance, mc.variance) == 0.0);
    CHECK(cv.corrector_solves == mc.corrector_solves);
    for (std::size_t m = 0; m < 8; ++m) CHECK(cv_table.rows[m].entries == mc_table.rows[m].entries);
  }

  TEST_CASE("controlled variance never exceeds raw variance; controls cost no solves") {
    const FieldSpec spec = bernoulli_spec(2, 3.0, 20.0, 0.5);
    CvOptions o;
    o.order = 2;
    const auto [r, table] = run_cv(spec, 4, 2, 20, 8, o);
    const SmallMat raw = matrix_from_json(r.extras.at("raw_variance"));
    for (int i = 0; i < 2; ++i) CHECK(r.variance(i, i) <= raw(i, i) * (1 + 1e-10));
    CHECK(r.extras.at("control_solves").get<std::uint64_t>() == 0);
    // 2 d for A*_per and one defect, d per canonical pair offset (9 for N = 4)
    CHECK(r.precompute_solves == 4 + 2 * 9);
    CHECK(r.corrector_solves == 40);
    CHECK(table.aux_names.size() == 12);
  }

  TEST_CASE("pilot mode fits rho on the first samples only") {
    const FieldSpec spec = bernoulli_spec(2, 3.0, 20.0, 0.5);
    CvOptions o;
    o.pilot = 6;
    const auto [r, table] = run_cv(spec, 3, 2, 16, 2, o);
    CHECK(r.M == 10);
    CHECK(r.extras.at("rho_mode") == "pilot");
    o.pilot = 15;
    CHECK_THROWS_AS(run_cv(spec, 3, 2, 16, 2, o), ConfigurationError);
  }

  TEST_CASE("control variates need the Bernoulli law") {
    FieldSpec s;
    s.dim = 2;
    s.law = TwoStateLaw{3.0, 23.0, 0.5};
    CHECK_THROWS_AS(run_cv(s, 3, 2, 4, 1), ConfigurationError);
  }

  TEST_CASE("defect table cache round trip and invalidation") {
    const auto dir = std::filesystem::temp_directory_path() / "hvr_cv_cache_test";
    std::filesystem::remove_all(dir);
    const std::string path = (dir / "table.json").string();
    const DefectCoefficients a = cached_defect_table(path, iso(2, 3.0), iso(2, 20.0), 3, 2, 2);
    CHECK(a.precompute_solves > 0);
    const DefectCoefficients b = cached_defect_table(path, iso(2, 3.0), iso(2, 20.0), 3, 2, 2);
    CHECK(b.precompute_solves == 0);
    CHECK(max_abs_diff(a.one_defect, b.one_defect) == 0.0);
    REQUIRE(a.two_defect.size() == b.two_defect.size());
    for (const auto& [l, d] : a.two_defect) CHECK(max_abs_diff(d, b.two_defect.at(l)) == 0.0);
    const DefectCoefficients c = cached_defect_table(path, iso(2, 3.0), iso(2, 10.0), 3, 2, 1);
    CHECK(c.precompute_solves > 0);
    CHECK(max_abs_diff(c.one_defect, a.one_defect) > 1e-3);
    std::filesystem::remove_all(dir);
  }
}
