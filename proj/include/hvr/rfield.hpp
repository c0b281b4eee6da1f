#pragma once

#include "hvr/common.hpp"
#include "hvr/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

namespace hvr {

/// Piecewise-constant data on an s x s (or s in 1D) sub-grid of the unit cell.
/// values are stored x-fastest: index = iy * s + ix.
struct UnitCell {
  int dim = 2;
  int subgrid = 1;
  std::vector<SmallMat> values;

  static UnitCell constant(const SmallMat& m, int dim);
  const SmallMat& at(int ix, int iy) const { return values[static_cast<std::size_t>(iy * subgrid + ix)]; }
  bool is_zero() const;
  bool is_isotropic() const;  // every sub-cell matrix is a multiple of the identity
};

/// Two-phase law: each cell independently alpha (probability p) or beta.
struct TwoStateLaw {
  double alpha = 1.0;
  double beta = 1.0;
  double p = 0.5;
};

enum class XLaw {
  bernoulli01,  // X in {0, 1}, P(X = 1) = eta_b
  pm1,          // X in {-1, +1}, fair
};

/// Cell k carries c0 + eta * X_k * c1, with X_k i.i.d. under x_law.
struct PerturbationSpec {
  SmallMat c0;
  UnitCell c1;
  double eta = 0.0;
  XLaw x_law = XLaw::pm1;
  double eta_b = 0.5;  // only used by bernoulli01
};

struct FieldSpec {
  int dim = 2;
  std::variant<TwoStateLaw, PerturbationSpec> law;
  bool isotropic = true;
};

/// Throws ConfigurationError when the law can produce a non-coercive cell or
/// parameters are out of range.
void validate(const FieldSpec& spec);

/// Smallest eigenvalue over every matrix the law can emit.
double coercivity_floor(const FieldSpec& spec);

enum class LatentKind {
  none,      // explicit data, no underlying draw
  uniform,   // u in [0,1) per cell, mapped through the law's inverse CDF
  discrete,  // the law's value X_k itself
};

/// One draw of the coefficient field restricted to Q_N.
struct FieldRealization {
  int dim = 2;
  int cells = 1;    // N, cells per side
  int subgrid = 1;  // s, sub-cells per cell side
  std::vector<SmallMat> values;  // (N*s)^dim sub-cell matrices, x-fastest
  LatentKind latent_kind = LatentKind::none;
  std::vector<double> latent;  // N^dim entries, cell index x-fastest
  std::optional<FieldSpec> spec;
  std::uint64_t seed = 0;

  std::size_t cell_count() const;
  int sub_per_side() const { return cells * subgrid; }
  const SmallMat& sub_value(int ix, int iy) const {
    return values[static_cast<std::size_t>(iy * sub_per_side() + ix)];
  }
  /// Matrix of cell k when subgrid == 1.
  const SmallMat& cell_value(std::size_t k) const;
};

/// Explicit per-cell data, one matrix per unit cell.
FieldRealization field_from_cells(int dim, int cells, std::vector<SmallMat> values);
/// Explicit per-cell scalar conductivities (values multiply the identity).
FieldRealization field_from_scalars(int dim, int cells, std::span<const double> values);
/// Periodic tiling of a unit cell over Q_N.
FieldRealization tile(const UnitCell& cell, int cells);

FieldRealization draw_field(const FieldSpec& spec, int cells, Stream& stream);

/// Latent u -> 1 - u (uniform) or the discrete equivalent; values recomputed
/// from the law. The result has the same law as the input.
FieldRealization antithetic_of(const FieldRealization& realization);

/// Cells carry c0 + eta * x_k * c1 for the given x values.
/// The dimension is taken from c0.
FieldRealization realize_perturbation(const PerturbationSpec& spec, std::span<const double> x_values, int cells);

/// Per-cell law values: X_k for perturbation laws, 1 for beta / 0 for alpha
/// under the two-state law.
std::vector<double> law_values(const FieldRealization& realization);

}  // namespace hvr
