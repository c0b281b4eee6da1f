#include "hvr/rfield.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hvr {

double min_eigenvalue(const SmallMat& m) {
  if (m.rows() == 1) return m(0, 0);
  const double tr = 0.5 * (m(0, 0) + m(1, 1));
  const double diff = 0.5 * (m(0, 0) - m(1, 1));
  const double off = 0.5 * (m(0, 1) + m(1, 0));
  return tr - std::hypot(diff, off);
}

double max_abs_diff(const SmallMat& a, const SmallMat& b) { return (a - b).cwiseAbs().maxCoeff(); }

UnitCell UnitCell::constant(const SmallMat& m, int dim) {
  UnitCell c;
  c.dim = dim;
  c.subgrid = 1;
  c.values = {m};
  return c;
}

bool UnitCell::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](const SmallMat& m) { return m.isZero(0.0); });
}

bool UnitCell::is_isotropic() const {
  return std::all_of(values.begin(), values.end(), [](const SmallMat& m) {
    if (m.rows() == 1) return true;
    return m(0, 1) == 0.0 && m(1, 0) == 0.0 && m(0, 0) == m(1, 1);
  });
}

namespace {

std::size_t ipow(int base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

bool is_symmetric(const SmallMat& m) { return m.rows() == m.cols() && (m - m.transpose()).isZero(0.0); }

std::vector<double> support(const PerturbationSpec& p) {
  if (p.x_law == XLaw::pm1) return {-1.0, 1.0};
  std::vector<double> s;
  if (p.eta_b < 1.0) s.push_back(0.0);
  if (p.eta_b > 0.0) s.push_back(1.0);
  return s;
}

double x_from_uniform(const PerturbationSpec& p, double u) {
  if (p.x_law == XLaw::pm1) return u < 0.5 ? -1.0 : 1.0;
  return u < p.eta_b ? 1.0 : 0.0;
}

// Per-cell law value -> sub-cell matrices written into values.
void fill_cell(FieldRealization& f, std::size_t k, const FieldSpec& spec, double law_value) {
  const int n = f.cells;
  const int s = f.subgrid;
  const int kx = static_cast<int>(k % static_cast<std::size_t>(n));
  const int ky = f.dim == 2 ? static_cast<int>(k / static_cast<std::size_t>(n)) : 0;
  const int side = n * s;
  for (int b = 0; b < (f.dim == 2 ? s : 1); ++b) {
    for (int a = 0; a < s; ++a) {
      SmallMat m;
      if (const auto* ts = std::get_if<TwoStateLaw>(&spec.law)) {
        m = scaled_identity(f.dim, law_value > 0.5 ? ts->beta : ts->alpha);
      } else {
        const auto& p = std::get<PerturbationSpec>(spec.law);
        m = p.c0 + (p.eta * law_value) * p.c1.at(a, f.dim == 2 ? b : 0);
      }
      const std::size_t idx = static_cast<std::size_t>((ky * s + b) * side + kx * s + a);
      f.values[idx] = m;
    }
  }
}

int law_subgrid(const FieldSpec& spec) {
  if (const auto* p = std::get_if<PerturbationSpec>(&spec.law)) return p->c1.subgrid;
  return 1;
}

FieldRealization empty_field(const FieldSpec& spec, int cells) {
  if (cells < 1) throw ConfigurationError("box side N must be >= 1");
  FieldRealization f;
  f.dim = spec.dim;
  f.cells = cells;
  f.subgrid = law_subgrid(spec);
  f.values.assign(ipow(cells * f.subgrid, spec.dim), SmallMat::Zero(spec.dim, spec.dim));
  f.spec = spec;
  return f;
}

double law_value_from_latent(const FieldSpec& spec, LatentKind kind, double latent) {
  if (kind == LatentKind::discrete) return latent;
  if (const auto* ts = std::get_if<TwoStateLaw>(&spec.law)) return latent < ts->p ? 0.0 : 1.0;
  return x_from_uniform(std::get<PerturbationSpec>(spec.law), latent);
}

void fill_from_latent(FieldRealization& f) {
  for (std::size_t k = 0; k < f.latent.size(); ++k) {
    fill_cell(f, k, *f.spec, law_value_from_latent(*f.spec, f.latent_kind, f.latent[k]));
  }
}

}  // namespace

void validate(const FieldSpec& spec) {
  if (spec.dim != 1 && spec.dim != 2) throw ConfigurationError("dimension must be 1 or 2");
  if (const auto* ts = std::get_if<TwoStateLaw>(&spec.law)) {
    if (!(ts->alpha > 0.0) || !(ts->beta > 0.0))
      throw ConfigurationError("two_state law requires alpha > 0 and beta > 0");
    if (!(ts->p >= 0.0 && ts->p <= 1.0)) throw ConfigurationError("two_state law requires 0 <= p <= 1");
    if (!spec.isotropic) throw ConfigurationError("two_state law is isotropic by definition");
    return;
  }
  const auto& p = std::get<PerturbationSpec>(spec.law);
  if (p.c0.rows() != spec.dim || p.c0.cols() != spec.dim)
    throw ConfigurationError("C0 must be a " + std::to_string(spec.dim) + "x" + std::to_string(spec.dim) + " matrix");
  if (!is_symmetric(p.c0)) throw ConfigurationError("C0 must be symmetric");
  if (p.c1.dim != spec.dim || p.c1.subgrid < 1 || p.c1.values.size() != ipow(p.c1.subgrid, spec.dim))
    throw ConfigurationError("C1 must hold subgrid^dim matrices of the field dimension");
  for (const auto& m : p.c1.values) {
    if (m.rows() != spec.dim || m.cols() != spec.dim) throw ConfigurationError("C1 matrix has the wrong size");
    if (!is_symmetric(m)) throw ConfigurationError("C1 must be symmetric");
  }
  if (!std::isfinite(p.eta)) throw ConfigurationError("eta must be finite");
  if (p.x_law == XLaw::bernoulli01 && !(p.eta_b >= 0.0 && p.eta_b <= 1.0))
    throw ConfigurationError("eta_B must lie in [0, 1]");
  if (!(coercivity_floor(spec) > 0.0))
    throw ConfigurationError("perturbation law produces a non-coercive cell matrix");
}

double coercivity_floor(const FieldSpec& spec) {
  if (const auto* ts = std::get_if<TwoStateLaw>(&spec.law)) {
    if (ts->p <= 0.0) return ts->beta;
    if (ts->p >= 1.0) return ts->alpha;
    return std::min(ts->alpha, ts->beta);
  }
  const auto& p = std::get<PerturbationSpec>(spec.law);
  double lo = std::numeric_limits<double>::infinity();
  for (double x : support(p))
    for (const auto& c1 : p.c1.values) lo = std::min(lo, min_eigenvalue(p.c0 + (p.eta * x) * c1));
  return lo;
}

std::size_t FieldRealization::cell_count() const { return ipow(cells, dim); }

const SmallMat& FieldRealization::cell_value(std::size_t k) const {
  if (subgrid != 1) throw UnsupportedOperation("cell_value requires a field without sub-grid");
  return values[k];
}

FieldRealization field_from_cells(int dim, int cells, std::vector<SmallMat> values) {
  if (dim != 1 && dim != 2) throw ConfigurationError("dimension must be 1 or 2");
  if (values.size() != ipow(cells, dim)) throw ConfigurationError("expected N^d cell matrices");
  for (const auto& m : values) {
    if (m.rows() != dim || !is_symmetric(m)) throw ConfigurationError("cell matrix must be symmetric d x d");
    if (!(min_eigenvalue(m) > 0.0)) throw ConfigurationError("cell matrix is not coercive");
  }
  FieldRealization f;
  f.dim = dim;
  f.cells = cells;
  f.subgrid = 1;
  f.values = std::move(values);
  return f;
}

FieldRealization field_from_scalars(int dim, int cells, std::span<const double> values) {
  std::vector<SmallMat> m;
  m.reserve(values.size());
  for (double v : values) m.push_back(scaled_identity(dim, v));
  return field_from_cells(dim, cells, std::move(m));
}

FieldRealization tile(const UnitCell& cell, int cells) {
  if (cells < 1) throw ConfigurationError("box side N must be >= 1");
  FieldRealization f;
  f.dim = cell.dim;
  f.cells = cells;
  f.subgrid = cell.subgrid;
  const int side = cells * cell.subgrid;
  f.values.resize(ipow(side, cell.dim));
  for (int iy = 0; iy < (cell.dim == 2 ? side : 1); ++iy)
    for (int ix = 0; ix < side; ++ix) {
      const SmallMat& m = cell.at(ix % cell.subgrid, iy % cell.subgrid);
      if (!(min_eigenvalue(m) > 0.0)) throw ConfigurationError("unit-cell matrix is not coercive");
      f.values[static_cast<std::size_t>(iy * side + ix)] = m;
    }
  return f;
}

FieldRealization draw_field(const FieldSpec& spec, int cells, Stream& stream) {
  validate(spec);
  FieldRealization f = empty_field(spec, cells);
  f.latent_kind = LatentKind::uniform;
  f.seed = stream.seed();
  f.latent.resize(f.cell_count());
  for (auto& u : f.latent) u = stream.uniform();
  fill_from_latent(f);
  return f;
}

FieldRealization antithetic_of(const FieldRealization& realization) {
  if (realization.latent_kind == LatentKind::none || !realization.spec)
    throw UnsupportedOperation("antithetic_of requires a realization drawn from a supported law");
  FieldRealization b = realization;
  if (b.latent_kind == LatentKind::uniform) {
    for (auto& u : b.latent) u = 1.0 - u;
  } else if (const auto* p = std::get_if<PerturbationSpec>(&b.spec->law)) {
    for (auto& x : b.latent) x = p->x_law == XLaw::pm1 ? -x : 1.0 - x;
  } else {
    for (auto& x : b.latent) x = 1.0 - x;
  }
  fill_from_latent(b);
  return b;
}

FieldRealization realize_perturbation(const PerturbationSpec& spec, std::span<const double> x_values, int cells) {
  FieldSpec fs;
  fs.dim = static_cast<int>(spec.c0.rows());
  fs.law = spec;
  fs.isotropic = spec.c1.is_isotropic() && spec.c0.isApprox(scaled_identity(fs.dim, spec.c0(0, 0)), 0.0);
  FieldRealization f = empty_field(fs, cells);
  if (x_values.size() != f.cell_count()) throw ConfigurationError("expected one x value per cell");
  f.latent_kind = LatentKind::discrete;
  f.latent.assign(x_values.begin(), x_values.end());
  fill_from_latent(f);
  for (const auto& m : f.values)
    if (!is_symmetric(m) || !(min_eigenvalue(m) > 0.0))
      throw ConfigurationError("perturbed cell matrix is not coercive");
  return f;
}

std::vector<double> law_values(const FieldRealization& realization) {
  if (realization.latent_kind == LatentKind::none || !realization.spec)
    throw UnsupportedOperation("realization carries no latent draw");
  std::vector<double> out(realization.latent.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = law_value_from_latent(*realization.spec, realization.latent_kind, realization.latent[k]);
  return out;
}

}  // namespace hvr
