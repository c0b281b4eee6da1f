#include "hvr/sqs.hpp"

#include "hvr/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace hvr {

namespace {

std::size_t box_cells(int N, int dim) { return dim == 2 ? static_cast<std::size_t>(N) * N : static_cast<std::size_t>(N); }

// chi C1 with chi = x_k on cell k; no coercivity requirement.
FieldRealization chi_field(const UnitCell& c1, std::span<const double> x, int N) {
  FieldRealization f;
  f.dim = c1.dim;
  f.cells = N;
  f.subgrid = c1.subgrid;
  const int s = c1.subgrid;
  const int side = N * s;
  f.values.assign(c1.dim == 2 ? static_cast<std::size_t>(side) * side : static_cast<std::size_t>(side),
                  SmallMat::Zero(c1.dim, c1.dim));
  for (std::size_t k = 0; k < x.size(); ++k) {
    const int kx = static_cast<int>(k % static_cast<std::size_t>(N));
    const int ky = c1.dim == 2 ? static_cast<int>(k / static_cast<std::size_t>(N)) : 0;
    for (int b = 0; b < (c1.dim == 2 ? s : 1); ++b)
      for (int a = 0; a < s; ++a)
        f.values[static_cast<std::size_t>((ky * s + b) * side + kx * s + a)] = x[k] * c1.at(a, b);
  }
  return f;
}

std::vector<SmallMat> constant_coefficients(const Mesh& mesh, const SmallMat& c0) {
  return std::vector<SmallMat>(mesh.element_count(), c0);
}

// Integral over Q_N of coeff(e) * g(e, q) (+ e_p when add_direction >= 0).
SmallVec integrate(const Mesh& mesh, std::span<const SmallMat> coeff, const QuadVectors& g, int add_direction) {
  SmallVec out = SmallVec::Zero(mesh.dim);
  const double w = mesh.quad_weight();
  for (std::size_t e = 0; e < mesh.element_count(); ++e)
    for (int q = 0; q < mesh.quad_points(); ++q) {
      SmallVec v = g.at(e, q);
      if (add_direction >= 0) v(add_direction) += 1.0;
      out += w * (coeff[e] * v);
    }
  return out;
}

QuadVectors product(const Mesh& mesh, std::span<const SmallMat> coeff, const QuadVectors& g, int add_direction) {
  QuadVectors out(mesh);
  for (std::size_t e = 0; e < mesh.element_count(); ++e)
    for (int q = 0; q < mesh.quad_points(); ++q) {
      SmallVec v = g.at(e, q);
      if (add_direction >= 0) v(add_direction) += 1.0;
      out.set(e, q, coeff[e] * v);
    }
  return out;
}

bool isotropic_matrix(const SmallMat& m) {
  return m.rows() == 1 || (m(0, 1) == 0.0 && m(1, 0) == 0.0 && m(0, 0) == m(1, 1));
}

bool same_cell(const UnitCell& a, const UnitCell& b) {
  if (a.dim != b.dim || a.subgrid != b.subgrid || a.values.size() != b.values.size()) return false;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    if (a.values[i] != b.values[i]) return false;
  return true;
}

const PerturbationSpec& pm1_spec(const FieldSpec& spec) {
  const auto* p = std::get_if<PerturbationSpec>(&spec.law);
  if (!p || p->x_law != XLaw::pm1) throw ConfigurationError("SQS sampling requires the +-1 perturbation law");
  return *p;
}

}  // namespace

ExpansionTerms expansion_terms(const PerturbationSpec& spec, std::span<const double> x_values, int N, int r,
                               const SolveOptions& options) {
  const int d = static_cast<int>(spec.c0.rows());
  if (x_values.size() != box_cells(N, d)) throw ConfigurationError("expected one x value per cell");
  const Mesh mesh(d, N, r);
  const std::vector<SmallMat> c0 = constant_coefficients(mesh, spec.c0);
  const std::vector<SmallMat> chi_c1 = element_coefficients(mesh, chi_field(spec.c1, x_values, N));
  const DiscreteOperator op = assemble(mesh, c0);
  const double volume = std::pow(static_cast<double>(N), d);

  ExpansionTerms t;
  t.a0 = SmallMat::Zero(d, d);
  t.a1 = SmallMat::Zero(d, d);
  t.a2 = SmallMat::Zero(d, d);
  for (int p = 0; p < d; ++p) {
    const QuadVectors zero(mesh);
    ScalarField w0 = solve_periodic(op, load_from_flux(product(mesh, c0, zero, p)), options);
    const QuadVectors g0 = gradient_at_quadrature(w0);
    ScalarField u1 = solve_periodic(op, load_from_flux(product(mesh, chi_c1, g0, p)), options);
    const QuadVectors g1 = gradient_at_quadrature(u1);
    ScalarField u2 = solve_periodic(op, load_from_flux(product(mesh, chi_c1, g1, -1)), options);
    const QuadVectors g2 = gradient_at_quadrature(u2);

    t.a0.col(p) = integrate(mesh, c0, g0, p) / volume;
    t.a1.col(p) = (integrate(mesh, chi_c1, g0, p) + integrate(mesh, c0, g1, -1)) / volume;
    t.a2.col(p) = (integrate(mesh, chi_c1, g1, -1) + integrate(mesh, c0, g2, -1)) / volume;
    t.w0.push_back(std::move(w0));
    t.u1.push_back(std::move(u1));
    t.u2.push_back(std::move(u2));
  }
  return t;
}

std::vector<int> SqsTables::ranked_directions() const {
  if (isotropic_matrix(c0) && c1.is_isotropic()) return {0};
  std::vector<int> all(static_cast<std::size_t>(dim));
  std::iota(all.begin(), all.end(), 0);
  return all;
}

std::vector<SmallMat> pair_integrals(const SmallMat& c0, const UnitCell& c1, int n, int r,
                                     const SolveOptions& options) {
  const int d = c1.dim;
  const Mesh mesh(d, n, r);
  const std::vector<SmallMat> base = constant_coefficients(mesh, c0);
  const DiscreteOperator op = assemble(mesh, base);
  const std::vector<double> ones(box_cells(n, d), 1.0);
  const std::vector<SmallMat> c1_elem = element_coefficients(mesh, chi_field(c1, ones, n));
  std::vector<SmallMat> out(box_cells(n, d), SmallMat::Zero(d, d));
  const double w = mesh.quad_weight();
  for (int p = 0; p < d; ++p) {
    QuadVectors source(mesh);
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
      const auto cell = mesh.element_cell(e);
      if (cell[0] != 0 || cell[1] != 0) continue;
      for (int q = 0; q < mesh.quad_points(); ++q) source.set(e, q, c1_elem[e].col(p));
    }
    const ScalarField phi = solve_periodic(op, load_from_flux(source), options);
    const QuadVectors g = gradient_at_quadrature(phi);
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
      const auto cell = mesh.element_cell(e);
      const std::size_t l = static_cast<std::size_t>(cell[1] * n + cell[0]);
      for (int q = 0; q < mesh.quad_points(); ++q) out[l].col(p) += w * (c1_elem[e] * g.at(e, q));
    }
  }
  return out;
}

SqsTables build_sqs_tables(const PerturbationSpec& spec, int N, int r, int n_ref, const SolveOptions& options) {
  const int d = static_cast<int>(spec.c0.rows());
  if (n_ref < 0) n_ref = 3 * N;
  if (n_ref < N) throw ConfigurationError("reference box N_ref must be >= N");
  SqsTables t;
  t.dim = d;
  t.N = N;
  t.r = r;
  t.n_ref = n_ref;
  t.c0 = spec.c0;
  t.c1 = spec.c1;
  t.n_coarse = std::max(1, (n_ref + 1) / 2);

  const int boxes[3] = {N, n_ref, t.n_coarse};
  std::vector<std::vector<SmallMat>> results(3);
  parallel_for(3, [&](std::size_t i) { results[i] = pair_integrals(spec.c0, spec.c1, boxes[i], r, options); });
  t.offsets = std::move(results[0]);
  t.offset_sum = SmallMat::Zero(d, d);
  for (const auto& m : t.offsets) t.offset_sum += m;
  t.i_infinity = results[1][0];
  t.i_infinity_error = max_abs_diff(results[1][0], results[2][0]);
  t.precompute_solves = 3 * static_cast<std::uint64_t>(d);
  return t;
}

nlohmann::json sqs_tables_to_json(const SqsTables& t) {
  nlohmann::json j;
  j["schema"] = "hvr-sqs-table-1";
  j["key"] = {{"c0", matrix_to_json(t.c0)}, {"c1", unit_cell_to_json(t.c1)}, {"N", t.N}, {"r", t.r}, {"n_ref", t.n_ref}};
  j["offsets"] = nlohmann::json::array();
  for (const auto& m : t.offsets) j["offsets"].push_back(matrix_to_json(m));
  j["offset_sum"] = matrix_to_json(t.offset_sum);
  j["i_infinity"] = matrix_to_json(t.i_infinity);
  j["n_coarse"] = t.n_coarse;
  j["i_infinity_error"] = t.i_infinity_error;
  return j;
}

SqsTables sqs_tables_from_json(const nlohmann::json& j) {
  if (j.value("schema", std::string{}) != "hvr-sqs-table-1") throw ConfigurationError("not an SQS table file");
  SqsTables t;
  const auto& key = j.at("key");
  t.c0 = matrix_from_json(key.at("c0"));
  t.c1 = unit_cell_from_json(key.at("c1"));
  t.dim = t.c1.dim;
  t.N = key.at("N").get<int>();
  t.r = key.at("r").get<int>();
  t.n_ref = key.at("n_ref").get<int>();
  for (const auto& m : j.at("offsets")) t.offsets.push_back(matrix_from_json(m));
  t.offset_sum = matrix_from_json(j.at("offset_sum"));
  t.i_infinity = matrix_from_json(j.at("i_infinity"));
  t.n_coarse = j.at("n_coarse").get<int>();
  t.i_infinity_error = j.at("i_infinity_error").get<double>();
  return t;
}

SqsTables cached_sqs_tables(const std::string& path, const PerturbationSpec& spec, int N, int r, int n_ref,
                            const SolveOptions& options) {
  if (n_ref < 0) n_ref = 3 * N;
  if (std::filesystem::exists(path)) {
    try {
      std::ifstream in(path);
      SqsTables t = sqs_tables_from_json(nlohmann::json::parse(in));
      if (t.c0 == spec.c0 && same_cell(t.c1, spec.c1) && t.N == N && t.r == r && t.n_ref == n_ref) return t;
    } catch (const std::exception&) {
      // rebuilt below
    }
  }
  SqsTables t = build_sqs_tables(spec, N, r, n_ref, options);
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path);
  out << sqs_tables_to_json(t).dump(2) << '\n';
  return t;
}

double sqs1_residual(std::span<const double> x_values) {
  if (x_values.empty()) throw ConfigurationError("empty configuration");
  double s = 0.0;
  for (double x : x_values) s += x;
  return s / static_cast<double>(x_values.size());
}

double sqs2_residual(std::span<const double> x_values, const SqsTables& tables) {
  const std::size_t n = tables.offsets.size();
  if (x_values.size() != n) throw std::logic_error("SQS tables do not match the configuration size");
  const int N = tables.N;
  const int ny = tables.dim == 2 ? N : 1;
  // Periodic autocorrelation c_l = sum_k x_k x_{k+l}.
  std::vector<double> corr(n, 0.0);
  for (int ly = 0; ly < ny; ++ly)
    for (int lx = 0; lx < N; ++lx) {
      double acc = 0.0;
      for (int ky = 0; ky < ny; ++ky)
        for (int kx = 0; kx < N; ++kx) {
          const std::size_t k = static_cast<std::size_t>(ky * N + kx);
          const std::size_t j = static_cast<std::size_t>(((ky + ly) % ny) * N + (kx + lx) % N);
          acc += x_values[k] * x_values[j];
        }
      corr[static_cast<std::size_t>(ly * N + lx)] = acc;
    }
  double worst = 0.0;
  for (int p : tables.ranked_directions()) {
    double lhs = 0.0;
    for (std::size_t l = 0; l < n; ++l) lhs += corr[l] * tables.offsets[l](p, p);
    lhs /= static_cast<double>(n);
    worst = std::max(worst, std::abs(lhs - tables.i_infinity(p, p)));
  }
  return worst;
}

SqsConfiguration sample_exact_sqs1(int N, int dim, Stream& stream, bool allow_odd) {
  const std::size_t n = box_cells(N, dim);
  SqsConfiguration c;
  c.seed = stream.seed();
  c.x_values.resize(n);
  std::size_t plus = n / 2;
  if (n % 2 == 1) {
    if (!allow_odd)
      throw ConfigurationError("N^d is odd, so no configuration has zero SQS1 residual; "
                               "enable the minimal-residual mode (|sum x| = 1)");
    c.balanced = false;
    if (stream.uniform() < 0.5) ++plus;
  }
  for (std::size_t k = 0; k < n; ++k) c.x_values[k] = k < plus ? 1.0 : -1.0;
  for (std::size_t i = n; i-- > 1;) std::swap(c.x_values[i], c.x_values[stream.below(i + 1)]);
  c.sqs1 = sqs1_residual(c.x_values);
  return c;
}

std::vector<SqsConfiguration> select_sqs2(int N, int dim, std::uint64_t master_seed, std::size_t keep,
                                          const SqsTables& tables, const SelectionOptions& options) {
  if (keep < 1 || options.pool < keep) throw ConfigurationError("selection requires pool >= keep >= 1");
  std::vector<SqsConfiguration> pool(options.pool);
  parallel_for(options.pool, [&](std::size_t i) {
    Stream stream = Stream::split(master_seed, i);
    pool[i] = sample_exact_sqs1(N, dim, stream, options.allow_odd);
    pool[i].index = i;
    pool[i].sqs2 = sqs2_residual(pool[i].x_values, tables);
  });
  std::vector<SqsConfiguration> out;
  if (options.tolerance) {
    for (auto& c : pool)
      if (c.sqs2 <= *options.tolerance && out.size() < keep) out.push_back(std::move(c));
    if (out.size() < keep)
      throw ConfigurationError("only " + std::to_string(out.size()) + " of " + std::to_string(options.pool) +
                               " pool configurations meet the SQS2 tolerance");
    return out;
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pool[a].sqs2 < pool[b].sqs2; });
  for (std::size_t i = 0; i < keep; ++i) out.push_back(std::move(pool[order[i]]));
  return out;
}

std::pair<EstimatorReport, SampleTable> run_sqs(const FieldSpec& spec, int N, int r, std::size_t M,
                                                std::uint64_t master_seed, const SqsOptions& options) {
  validate(spec);
  const PerturbationSpec& pert = pm1_spec(spec);
  if (options.order != 1 && options.order != 2) throw ConfigurationError("SQS order must be 1 or 2");
  if (M < 2) throw ConfigurationError("run_sqs requires M >= 2");
  const int d = spec.dim;
  const auto start = std::chrono::steady_clock::now();

  std::optional<SqsTables> tables;
  if (options.order == 2)
    tables = options.cache_path.empty()
                 ? build_sqs_tables(pert, N, r, options.n_ref, options.solver)
                 : cached_sqs_tables(options.cache_path, pert, N, r, options.n_ref, options.solver);

  const std::uint64_t solves_before = solve_count();
  std::vector<SqsConfiguration> configs;
  if (options.order == 1) {
    configs.resize(M);
    parallel_for(M, [&](std::size_t m) {
      Stream stream = Stream::split(master_seed, m);
      configs[m] = sample_exact_sqs1(N, d, stream, options.selection.allow_odd);
      configs[m].index = m;
    });
  } else {
    configs = select_sqs2(N, d, master_seed, M, *tables, options.selection);
  }
  const std::uint64_t selection_solves = solve_count() - solves_before;

  std::vector<HomogenizedMatrix> results(M);
  parallel_for(M, [&](std::size_t m) {
    try {
      results[m] = homogenized_matrix(realize_perturbation(pert, configs[m].x_values, N), r, options.solver);
    } catch (const std::exception& e) {
      throw RealizationError(m, e.what());
    }
  });

  SampleTable table;
  table.dim = d;
  table.aux_names = {"pool_index", "sqs1_residual"};
  if (options.order == 2) table.aux_names.push_back("sqs2_residual");
  std::vector<SmallMat> samples(M);
  double max_sqs1 = 0.0, mean_sqs2 = 0.0, max_sqs2 = 0.0;
  bool balanced = true;
  for (std::size_t m = 0; m < M; ++m) {
    SampleRow row{m, configs[m].seed, results[m].value, {static_cast<double>(configs[m].index), configs[m].sqs1}};
    if (options.order == 2) row.aux.push_back(configs[m].sqs2);
    table.rows.push_back(std::move(row));
    samples[m] = results[m].value;
    max_sqs1 = std::max(max_sqs1, std::abs(configs[m].sqs1));
    mean_sqs2 += configs[m].sqs2 / static_cast<double>(M);
    max_sqs2 = std::max(max_sqs2, configs[m].sqs2);
    balanced = balanced && configs[m].balanced;
  }

  EstimatorReport report;
  report.method = options.order == 1 ? "sqs1" : "sqs2";
  report.dim = d;
  report.N = N;
  report.r = r;
  report.master_seed = master_seed;
  report.corrector_solves = static_cast<std::uint64_t>(d) * M;
  report.precompute_solves = tables ? tables->precompute_solves : 0;
  fill_statistics(report, samples);

  report.extras["order"] = options.order;
  report.extras["selection_solves"] = selection_solves;
  report.extras["max_abs_sqs1_residual"] = max_sqs1;
  report.extras["balanced"] = balanced;
  if (options.order == 2) {
    report.extras["pool"] = options.selection.pool;
    if (options.selection.tolerance) report.extras["tolerance"] = *options.selection.tolerance;
    report.extras["mean_sqs2_residual"] = mean_sqs2;
    report.extras["max_sqs2_residual"] = max_sqs2;
    report.extras["n_ref"] = tables->n_ref;
    report.extras["i_infinity"] = matrix_to_json(tables->i_infinity);
    report.extras["i_infinity_error"] = tables->i_infinity_error;
    report.extras["offset_sum"] = matrix_to_json(tables->offset_sum);
  }
  if (options.baseline) {
    // (mean - baseline mean) / baseline CI half-width, entrywise.
    const EstimatorReport& b = *options.baseline;
    SmallMat bias(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        bias(i, j) = b.ci_half_width(i, j) > 0.0 ? (report.mean(i, j) - b.mean(i, j)) / b.ci_half_width(i, j) : 0.0;
    report.extras["bias_indicator"] = matrix_to_json(bias);
  }
  report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {report, table};
}

}  // namespace hvr
