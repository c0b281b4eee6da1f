#include "hvr/control_variate.hpp"

#include "hvr/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hvr {

namespace {

int mod(int a, int n) { return ((a % n) + n) % n; }

double volume(int N, int dim) { return std::pow(static_cast<double>(N), dim); }

std::size_t cell_index(Offset k, int N, int dim) {
  const int x = mod(k[0], N);
  const int y = dim == 2 ? mod(k[1], N) : 0;
  return static_cast<std::size_t>(y * N + x);
}

void check_unit_cells(const UnitCell& a_per, const UnitCell& c_per) {
  if (a_per.dim != c_per.dim) throw ConfigurationError("A_per and C_per dimensions differ");
  if (a_per.subgrid != c_per.subgrid) throw ConfigurationError("A_per and C_per must share a sub-grid");
}

// A_per tiled over Q_N with C_per added on each listed cell.
FieldRealization defect_field(const UnitCell& a_per, const UnitCell& c_per, int N, std::span<const Offset> defects) {
  check_unit_cells(a_per, c_per);
  FieldRealization f = tile(a_per, N);
  const int s = a_per.subgrid;
  const int side = N * s;
  for (const Offset& k : defects) {
    const int kx = mod(k[0], N);
    const int ky = a_per.dim == 2 ? mod(k[1], N) : 0;
    for (int b = 0; b < (a_per.dim == 2 ? s : 1); ++b)
      for (int a = 0; a < s; ++a)
        f.values[static_cast<std::size_t>((ky * s + b) * side + kx * s + a)] += c_per.at(a, b);
  }
  for (const auto& m : f.values)
    if (!(min_eigenvalue(m) > 0.0)) throw ConfigurationError("A_per + C_per is not coercive");
  return f;
}

// int_{Q_N} A (e_j + grad w_j) for the defect field.
SmallMat defect_flux(const UnitCell& a_per, const UnitCell& c_per, int N, int r, std::span<const Offset> defects,
                     const SolveOptions& options) {
  const CellProblem problem = make_cell_problem(defect_field(a_per, c_per, N, defects), r);
  std::vector<CorrectorSolution> correctors;
  for (int j = 0; j < a_per.dim; ++j) correctors.push_back(solve_corrector(problem, j, options));
  return flux_integral(problem, correctors);
}

bool same_cell(const UnitCell& a, const UnitCell& b) {
  if (a.dim != b.dim || a.subgrid != b.subgrid || a.values.size() != b.values.size()) return false;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    if (a.values[i] != b.values[i]) return false;
  return true;
}

int default_cutoff(int cutoff, int N) { return cutoff < 0 ? N / 2 : cutoff; }

std::string describe(Offset l, int dim) {
  std::ostringstream s;
  s << '(' << l[0];
  if (dim == 2) s << ',' << l[1];
  s << ')';
  return s.str();
}

// Computes D_l for every needed offset that the table lacks.
void fill_pairs(DefectCoefficients& t, int cutoff, const SolveOptions& options) {
  t.cutoff = std::max(t.cutoff, cutoff);
  std::vector<Offset> missing;
  for (const Offset& l : offsets_within(t.N, t.dim, cutoff))
    if (!t.two_defect.count(l)) missing.push_back(l);
  std::vector<SmallMat> values(missing.size());
  parallel_for(missing.size(), [&](std::size_t i) {
    const Offset pair[2] = {Offset{0, 0}, missing[i]};
    values[i] = defect_flux(t.a_per, t.c_per, t.N, t.r, pair, options) - volume(t.N, t.dim) * t.a_per_star -
                2.0 * t.one_defect;
  });
  for (std::size_t i = 0; i < missing.size(); ++i) t.two_defect[missing[i]] = values[i];
  t.precompute_solves += static_cast<std::uint64_t>(t.dim) * missing.size();
}

}  // namespace

Offset canonical_offset(Offset l, int N, int dim) {
  Offset a{mod(l[0], N), dim == 2 ? mod(l[1], N) : 0};
  Offset b{mod(-l[0], N), dim == 2 ? mod(-l[1], N) : 0};
  return std::min(a, b);
}

int periodic_norm(Offset l, int N, int dim) {
  int n = 0;
  for (int c = 0; c < dim; ++c) {
    const int v = mod(l[static_cast<std::size_t>(c)], N);
    n = std::max(n, std::min(v, N - v));
  }
  return n;
}

std::vector<Offset> offsets_within(int N, int dim, int cutoff) {
  std::vector<Offset> out;
  for (int y = 0; y < (dim == 2 ? N : 1); ++y)
    for (int x = 0; x < N; ++x) {
      const Offset l{x, y};
      if ((x == 0 && y == 0) || periodic_norm(l, N, dim) > cutoff) continue;
      if (canonical_offset(l, N, dim) == l) out.push_back(l);
    }
  std::sort(out.begin(), out.end());
  return out;
}

SmallMat one_defect_coefficient(const UnitCell& a_per, const UnitCell& c_per, int N, int r, Offset position,
                                const SolveOptions& options) {
  const SmallMat a_star = periodic_homogenize(a_per, r, options).value;
  const Offset defects[1] = {position};
  return defect_flux(a_per, c_per, N, r, defects, options) - volume(N, a_per.dim) * a_star;
}

SmallMat two_defect_coefficient(const UnitCell& a_per, const UnitCell& c_per, int N, int r, Offset l,
                                const SolveOptions& options) {
  if (periodic_norm(l, N, a_per.dim) == 0) throw ConfigurationError("two-defect offset must be nonzero modulo N");
  const SmallMat a_star = periodic_homogenize(a_per, r, options).value;
  const SmallMat one = one_defect_coefficient(a_per, c_per, N, r, {0, 0}, options);
  const Offset pair[2] = {Offset{0, 0}, l};
  return defect_flux(a_per, c_per, N, r, pair, options) - volume(N, a_per.dim) * a_star - 2.0 * one;
}

DefectCoefficients build_defect_table(const UnitCell& a_per, const UnitCell& c_per, int N, int r, int order,
                                      int cutoff, const SolveOptions& options) {
  check_unit_cells(a_per, c_per);
  if (order != 1 && order != 2) throw ConfigurationError("control-variate order must be 1 or 2");
  DefectCoefficients t;
  t.dim = a_per.dim;
  t.N = N;
  t.r = r;
  t.a_per = a_per;
  t.c_per = c_per;
  t.a_per_star = periodic_homogenize(a_per, r, options).value;
  const Offset defects[1] = {Offset{0, 0}};
  t.one_defect = defect_flux(a_per, c_per, N, r, defects, options) - volume(N, t.dim) * t.a_per_star;
  t.precompute_solves = 2 * static_cast<std::uint64_t>(t.dim);
  if (order == 2) fill_pairs(t, default_cutoff(cutoff, N), options);
  return t;
}

nlohmann::json defect_table_to_json(const DefectCoefficients& t) {
  nlohmann::json j;
  j["schema"] = "hvr-defect-table-1";
  j["key"] = {{"a_per", unit_cell_to_json(t.a_per)},
              {"c_per", unit_cell_to_json(t.c_per)},
              {"N", t.N},
              {"r", t.r}};
  j["a_per_star"] = matrix_to_json(t.a_per_star);
  j["one_defect"] = matrix_to_json(t.one_defect);
  j["cutoff"] = t.cutoff;
  j["two_defect"] = nlohmann::json::array();
  for (const auto& [l, D] : t.two_defect) {
    nlohmann::json offset = {l[0]};
    if (t.dim == 2) offset.push_back(l[1]);
    j["two_defect"].push_back({{"offset", offset}, {"D", matrix_to_json(D)}});
  }
  return j;
}

DefectCoefficients defect_table_from_json(const nlohmann::json& j) {
  if (j.value("schema", std::string{}) != "hvr-defect-table-1")
    throw ConfigurationError("not a defect table file");
  DefectCoefficients t;
  const auto& key = j.at("key");
  t.a_per = unit_cell_from_json(key.at("a_per"));
  t.c_per = unit_cell_from_json(key.at("c_per"));
  t.dim = t.a_per.dim;
  t.N = key.at("N").get<int>();
  t.r = key.at("r").get<int>();
  t.a_per_star = matrix_from_json(j.at("a_per_star"));
  t.one_defect = matrix_from_json(j.at("one_defect"));
  t.cutoff = j.at("cutoff").get<int>();
  for (const auto& e : j.at("two_defect")) {
    const auto& o = e.at("offset");
    Offset l{o.at(0).get<int>(), t.dim == 2 ? o.at(1).get<int>() : 0};
    t.two_defect[l] = matrix_from_json(e.at("D"));
  }
  return t;
}

DefectCoefficients cached_defect_table(const std::string& path, const UnitCell& a_per, const UnitCell& c_per, int N,
                                       int r, int order, int cutoff, const SolveOptions& options) {
  std::optional<DefectCoefficients> table;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    try {
      DefectCoefficients t = defect_table_from_json(nlohmann::json::parse(in));
      if (same_cell(t.a_per, a_per) && same_cell(t.c_per, c_per) && t.N == N && t.r == r) {
        t.precompute_solves = 0;
        table = std::move(t);
      }
    } catch (const std::exception&) {
      // unreadable cache is rebuilt
    }
  }
  if (!table) {
    table = build_defect_table(a_per, c_per, N, r, 1, cutoff, options);
  }
  if (order == 2) fill_pairs(*table, default_cutoff(cutoff, N), options);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  out << defect_table_to_json(*table).dump(2) << '\n';
  return *table;
}

SmallMat control_expectation(double eta_b, const DefectCoefficients& table, int order) {
  if (order == 1) return table.a_per_star + eta_b * table.one_defect;
  if (order != 2) throw ConfigurationError("control order must be 1 or 2");
  if (table.cutoff < 0) throw ConfigurationError("defect table has no pair interactions");
  SmallMat sum = SmallMat::Zero(table.dim, table.dim);
  std::vector<std::string> missing;
  for (int y = 0; y < (table.dim == 2 ? table.N : 1); ++y)
    for (int x = 0; x < table.N; ++x) {
      const Offset l{x, y};
      if ((x == 0 && y == 0) || periodic_norm(l, table.N, table.dim) > table.cutoff) continue;
      const auto it = table.two_defect.find(canonical_offset(l, table.N, table.dim));
      if (it == table.two_defect.end()) {
        missing.push_back(describe(l, table.dim));
        continue;
      }
      sum += it->second;
    }
  if (!missing.empty()) {
    std::string msg = "defect table lacks offsets:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigurationError(msg);
  }
  // sum over unordered pairs {k, j}: |Q_N| / 2 pairs per offset l, each with
  // probability eta_b^2, divided by |Q_N| once.
  return 0.5 * eta_b * eta_b * sum;
}

Controls evaluate_controls(std::span<const double> b_values, const DefectCoefficients& table, int order) {
  const int N = table.N;
  const int d = table.dim;
  const std::size_t n = b_values.size();
  if (n != static_cast<std::size_t>(std::llround(volume(N, d))))
    throw ConfigurationError("expected one Bernoulli value per cell");
  const double vol = volume(N, d);
  double total = 0.0;
  for (double b : b_values) total += b;
  Controls c;
  c.y1 = table.a_per_star + (total / vol) * table.one_defect;
  if (order < 2) return c;

  // Dense lookup by linear offset index; null outside the cutoff.
  std::vector<const SmallMat*> lookup(n, nullptr);
  std::vector<std::string> missing;
  for (std::size_t idx = 1; idx < n; ++idx) {
    const Offset l{static_cast<int>(idx % static_cast<std::size_t>(N)),
                   d == 2 ? static_cast<int>(idx / static_cast<std::size_t>(N)) : 0};
    if (periodic_norm(l, N, d) > table.cutoff) continue;
    const auto it = table.two_defect.find(canonical_offset(l, N, d));
    if (it == table.two_defect.end()) {
      missing.push_back(describe(l, d));
      continue;
    }
    lookup[idx] = &it->second;
  }
  if (!missing.empty()) {
    std::string msg = "defect table lacks offsets:";
    for (const auto& m : missing) msg += " " + m;
    throw ConfigurationError(msg);
  }

  c.y2 = SmallMat::Zero(d, d);
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < n; ++k)
    if (b_values[k] != 0.0) active.push_back(k);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const std::size_t k = active[a];
    const Offset pk{static_cast<int>(k % static_cast<std::size_t>(N)), static_cast<int>(k / static_cast<std::size_t>(N))};
    for (std::size_t b = a + 1; b < active.size(); ++b) {
      const std::size_t j = active[b];
      const Offset pj{static_cast<int>(j % static_cast<std::size_t>(N)),
                      static_cast<int>(j / static_cast<std::size_t>(N))};
      const std::size_t l = cell_index({pj[0] - pk[0], pj[1] - pk[1]}, N, d);
      if (lookup[l]) c.y2 += (b_values[k] * b_values[j]) * *lookup[l];
    }
  }
  c.y2 /= vol;
  return c;
}

RhoFit optimal_rho(std::span<const double> x, const std::vector<std::vector<double>>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw ConfigurationError("optimal_rho needs >= 2 matched samples");
  const std::size_t c = y.front().size();
  RhoFit fit;
  fit.rho.assign(c, 0.0);
  if (c == 0) {
    fit.degenerate = true;
    return fit;
  }
  double xm = 0.0;
  for (double v : x) xm += v;
  xm /= static_cast<double>(n);
  Eigen::VectorXd ym = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
  for (const auto& row : y)
    for (std::size_t i = 0; i < c; ++i) ym(static_cast<Eigen::Index>(i)) += row[i];
  ym /= static_cast<double>(n);
  Eigen::MatrixXd syy = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c));
  Eigen::VectorXd syx = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
  for (std::size_t m = 0; m < n; ++m) {
    Eigen::VectorXd dy(static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < c; ++i) dy(static_cast<Eigen::Index>(i)) = y[m][i] - ym(static_cast<Eigen::Index>(i));
    syy += dy * dy.transpose();
    syx += dy * (x[m] - xm);
  }
  syy /= static_cast<double>(n - 1);
  syx /= static_cast<double>(n - 1);

  // Controls with (numerically) zero spread carry no information.
  std::vector<Eigen::Index> live;
  for (std::size_t i = 0; i < c; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double scale = std::max(std::abs(ym(ii)), 1.0);
    if (syy(ii, ii) > 1e-24 * scale * scale) live.push_back(ii);
    else fit.degenerate = true;
  }
  if (live.empty()) return fit;
  const auto k = static_cast<Eigen::Index>(live.size());
  Eigen::MatrixXd s(k, k);
  Eigen::VectorXd t(k);
  for (Eigen::Index a = 0; a < k; ++a) {
    t(a) = syx(live[static_cast<std::size_t>(a)]);
    for (Eigen::Index b = 0; b < k; ++b) s(a, b) = syy(live[static_cast<std::size_t>(a)], live[static_cast<std::size_t>(b)]);
  }
  // Singularity test on the correlation matrix, which is scale free.
  const Eigen::VectorXd inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd corr = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
  const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(corr).eigenvalues().minCoeff();
  if (!(min_eig > 1e-12)) {
    fit.rho.assign(c, 0.0);
    fit.degenerate = true;
    return fit;
  }
  const Eigen::VectorXd rho = s.ldlt().solve(t);
  for (Eigen::Index a = 0; a < k; ++a) fit.rho[static_cast<std::size_t>(live[static_cast<std::size_t>(a)])] = rho(a);
  return fit;
}

std::pair<EstimatorReport, SampleTable> run_cv(const FieldSpec& spec, int N, int r, std::size_t M,
                                               std::uint64_t master_seed, const CvOptions& options) {
  validate(spec);
  const auto* pert = std::get_if<PerturbationSpec>(&spec.law);
  if (!pert || pert->x_law != XLaw::bernoulli01)
    throw ConfigurationError("control variates require the Bernoulli perturbation law");
  if (options.order != 1 && options.order != 2) throw ConfigurationError("control-variate order must be 1 or 2");
  if (M < 2) throw ConfigurationError("run_cv requires M >= 2");
  if (options.pilot > 0 && (options.pilot < 2 || M - options.pilot < 2 || options.pilot >= M))
    throw ConfigurationError("pilot size must leave >= 2 samples on both sides");
  const int d = spec.dim;
  const int order = options.order;
  const auto start = std::chrono::steady_clock::now();

  const UnitCell a_per = UnitCell::constant(pert->c0, d);
  UnitCell c_per = pert->c1;
  for (auto& m : c_per.values) m *= pert->eta;
  UnitCell a_per_grid = a_per;
  if (c_per.subgrid != 1) {
    a_per_grid.subgrid = c_per.subgrid;
    a_per_grid.values.assign(c_per.values.size(), pert->c0);
  }
  const DefectCoefficients table =
      options.cache_path.empty()
          ? build_defect_table(a_per_grid, c_per, N, r, order, options.cutoff, options.solver)
          : cached_defect_table(options.cache_path, a_per_grid, c_per, N, r, order, options.cutoff, options.solver);

  // Raw samples: identical draws to run_mc with the same seed.
  std::vector<FieldRealization> fields(M);
  std::vector<HomogenizedMatrix> raw(M);
  parallel_for(M, [&](std::size_t m) {
    try {
      Stream stream = Stream::split(master_seed, m);
      fields[m] = draw_field(spec, N, stream);
      raw[m] = homogenized_matrix(fields[m], r, options.solver);
    } catch (const std::exception& e) {
      throw RealizationError(m, e.what());
    }
  });

  const std::uint64_t solves_before = solve_count();
  std::vector<Controls> controls(M);
  for (std::size_t m = 0; m < M; ++m) controls[m] = evaluate_controls(law_values(fields[m]), table, order);
  const std::uint64_t control_solves = solve_count() - solves_before;

  const SmallMat e1 = control_expectation(pert->eta_b, table, 1);
  const SmallMat e2 = order == 2 ? control_expectation(pert->eta_b, table, 2) : SmallMat();

  const std::size_t fit_end = options.pilot > 0 ? options.pilot : M;
  const std::size_t est_begin = options.pilot > 0 ? options.pilot : 0;
  nlohmann::json rho_json = nlohmann::json::array();
  nlohmann::json degenerate_json = nlohmann::json::array();
  std::vector<SmallMat> controlled(M, SmallMat::Zero(d, d));
  for (int i = 0; i < d; ++i) {
    nlohmann::json rho_row = nlohmann::json::array();
    nlohmann::json deg_row = nlohmann::json::array();
    for (int j = 0; j < d; ++j) {
      std::vector<double> rho;
      bool degenerate = false;
      if (options.fixed_rho) {
        rho = *options.fixed_rho;
        rho.resize(static_cast<std::size_t>(order), rho.empty() ? 0.0 : rho.back());
      } else {
        std::vector<double> x(fit_end);
        std::vector<std::vector<double>> y(fit_end);
        for (std::size_t m = 0; m < fit_end; ++m) {
          x[m] = raw[m].value(i, j);
          y[m] = {controls[m].y1(i, j)};
          if (order == 2) y[m].push_back(controls[m].y2(i, j));
        }
        RhoFit fit = optimal_rho(x, y);
        rho = fit.rho;
        degenerate = fit.degenerate;
      }
      for (std::size_t m = 0; m < M; ++m) {
        double v = raw[m].value(i, j) - rho[0] * (controls[m].y1(i, j) - e1(i, j));
        if (order == 2) v -= rho[1] * (controls[m].y2(i, j) - e2(i, j));
        controlled[m](i, j) = v;
      }
      rho_row.push_back(rho);
      deg_row.push_back(degenerate);
    }
    rho_json.push_back(rho_row);
    degenerate_json.push_back(deg_row);
  }

  SampleTable table_out;
  table_out.dim = d;
  append_matrix_names(table_out.aux_names, "y1", d);
  if (order == 2) append_matrix_names(table_out.aux_names, "y2", d);
  append_matrix_names(table_out.aux_names, "cv", d);
  table_out.estimator_prefix = "cv";
  for (std::size_t m = 0; m < M; ++m) {
    SampleRow row{m, raw[m].seed, raw[m].value, {}};
    append_matrix_values(row.aux, controls[m].y1);
    if (order == 2) append_matrix_values(row.aux, controls[m].y2);
    append_matrix_values(row.aux, controlled[m]);
    table_out.rows.push_back(std::move(row));
  }

  EstimatorReport report;
  report.method = order == 1 ? "cv1" : "cv2";
  report.dim = d;
  report.N = N;
  report.r = r;
  report.master_seed = master_seed;
  report.corrector_solves = static_cast<std::uint64_t>(d) * M;
  report.precompute_solves = table.precompute_solves;
  const std::vector<SmallMat> estimate(controlled.begin() + static_cast<std::ptrdiff_t>(est_begin), controlled.end());
  fill_statistics(report, estimate);
  std::vector<SmallMat> raw_values(M);
  for (std::size_t m = 0; m < M; ++m) raw_values[m] = raw[m].value;
  const SampleStats raw_stats = sample_stats(raw_values);

  if (!options.fixed_rho && options.pilot == 0) {
    // Least-squares projection never increases the sample variance.
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (report.variance(i, j) > raw_stats.variance(i, j) * (1.0 + 1e-10) + 1e-300)
          throw std::logic_error("controlled variance exceeds raw variance");
  }

  report.extras["order"] = order;
  report.extras["rho"] = rho_json;
  report.extras["rho_degenerate"] = degenerate_json;
  report.extras["rho_mode"] = options.fixed_rho ? "fixed" : (options.pilot > 0 ? "pilot" : "same_sample");
  if (options.pilot > 0) report.extras["pilot"] = options.pilot;
  report.extras["raw_mean"] = matrix_to_json(raw_stats.mean);
  report.extras["raw_variance"] = matrix_to_json(raw_stats.variance);
  report.extras["a_per_star"] = matrix_to_json(table.a_per_star);
  report.extras["one_defect"] = matrix_to_json(table.one_defect);
  report.extras["control_expectation_1"] = matrix_to_json(e1);
  if (order == 2) {
    report.extras["control_expectation_2"] = matrix_to_json(e2);
    report.extras["cutoff"] = table.cutoff;
    report.extras["pair_offsets"] = table.two_defect.size();
  }
  report.extras["control_solves"] = control_solves;
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {report, table_out};
}

}  // namespace hvr
