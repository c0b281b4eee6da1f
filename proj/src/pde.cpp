#include "hvr/pde.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace hvr {

namespace {

std::atomic<std::uint64_t> g_solves{0};

// 2-point Gauss abscissae on [0, 1].
constexpr double kGaussLo = 0.5 - 0.28867513459481288225;
constexpr double kGaussHi = 0.5 + 0.28867513459481288225;

}  // namespace

Mesh::Mesh(int d, int n, int r) : dim(d), cells(n), resolution(r) {
  if (dim != 1 && dim != 2) throw ConfigurationError("mesh dimension must be 1 or 2");
  if (cells < 1) throw ConfigurationError("mesh needs N >= 1");
  if (resolution < 1) throw ConfigurationError("mesh resolution r must be >= 1");
}

std::size_t Mesh::node_count() const {
  const auto n = static_cast<std::size_t>(per_side());
  return dim == 1 ? n : n * n;
}

std::array<std::size_t, 4> Mesh::element_nodes(std::size_t e) const {
  const auto n = static_cast<std::size_t>(per_side());
  if (dim == 1) return {e, (e + 1) % n, 0, 0};
  const std::size_t ex = e % n;
  const std::size_t ey = e / n;
  const std::size_t xr = (ex + 1) % n;
  const std::size_t yt = (ey + 1) % n;
  return {ey * n + ex, ey * n + xr, yt * n + ex, yt * n + xr};
}

SmallVec Mesh::shape_gradient(int a, int q) const {
  const double inv_h = static_cast<double>(resolution);
  if (dim == 1) {
    SmallVec g(1);
    g(0) = (a == 0 ? -1.0 : 1.0) * inv_h;
    return g;
  }
  // local nodes: 0 (0,0), 1 (1,0), 2 (0,1), 3 (1,1); q = qy * 2 + qx
  const double xi = (q % 2 == 0) ? kGaussLo : kGaussHi;
  const double zeta = (q / 2 == 0) ? kGaussLo : kGaussHi;
  const double sx = (a % 2 == 0) ? -1.0 : 1.0;
  const double sy = (a / 2 == 0) ? -1.0 : 1.0;
  const double fx = (a % 2 == 0) ? 1.0 - xi : xi;
  const double fy = (a / 2 == 0) ? 1.0 - zeta : zeta;
  SmallVec g(2);
  g(0) = sx * fy * inv_h;
  g(1) = sy * fx * inv_h;
  return g;
}

std::array<int, 2> Mesh::element_cell(std::size_t e) const {
  const auto n = static_cast<std::size_t>(per_side());
  const int ex = static_cast<int>(e % n);
  const int ey = dim == 2 ? static_cast<int>(e / n) : 0;
  return {ex / resolution, ey / resolution};
}

QuadVectors::QuadVectors(const Mesh& m)
    : mesh(m),
      data(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.element_count() *
                                                           static_cast<std::size_t>(m.quad_points() * m.dim)))) {}

SmallVec QuadVectors::at(std::size_t e, int q) const {
  const std::size_t o = offset(e, q);
  SmallVec v(mesh.dim);
  for (int i = 0; i < mesh.dim; ++i) v(i) = data(static_cast<Eigen::Index>(o) + i);
  return v;
}

void QuadVectors::set(std::size_t e, int q, const SmallVec& v) {
  const std::size_t o = offset(e, q);
  for (int i = 0; i < mesh.dim; ++i) data(static_cast<Eigen::Index>(o) + i) = v(i);
}

void QuadVectors::add(std::size_t e, int q, const SmallVec& v) {
  const std::size_t o = offset(e, q);
  for (int i = 0; i < mesh.dim; ++i) data(static_cast<Eigen::Index>(o) + i) += v(i);
}

std::vector<SmallMat> element_coefficients(const Mesh& mesh, const FieldRealization& field) {
  if (field.dim != mesh.dim || field.cells != mesh.cells)
    throw ConfigurationError("field and mesh disagree on dimension or box size");
  if (mesh.resolution % field.subgrid != 0)
    throw ConfigurationError("mesh resolution must be a multiple of the coefficient sub-grid");
  const int per_sub = mesh.resolution / field.subgrid;
  const auto n = static_cast<std::size_t>(mesh.per_side());
  std::vector<SmallMat> out(mesh.element_count());
  for (std::size_t e = 0; e < out.size(); ++e) {
    const int ex = static_cast<int>(e % n);
    const int ey = mesh.dim == 2 ? static_cast<int>(e / n) : 0;
    out[e] = field.sub_value(ex / per_sub, ey / per_sub);
  }
  return out;
}

DiscreteOperator assemble(const Mesh& mesh, std::span<const SmallMat> coefficients) {
  if (coefficients.size() != mesh.element_count())
    throw ConfigurationError("assemble expects one coefficient matrix per element");
  const int nloc = mesh.nodes_per_element();
  const int nq = mesh.quad_points();
  const double w = mesh.quad_weight();

  std::vector<SmallVec> grads(static_cast<std::size_t>(nloc * nq));
  for (int a = 0; a < nloc; ++a)
    for (int q = 0; q < nq; ++q) grads[static_cast<std::size_t>(a * nq + q)] = mesh.shape_gradient(a, q);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(mesh.element_count() * static_cast<std::size_t>(nloc * nloc));
  for (std::size_t e = 0; e < mesh.element_count(); ++e) {
    const SmallMat& A = coefficients[e];
    if (A.rows() != mesh.dim || A.cols() != mesh.dim)
      throw ConfigurationError("element coefficient has the wrong dimension");
    if (!(min_eigenvalue(A) > 0.0)) {
      std::ostringstream msg;
      msg << "non-coercive coefficient on element " << e;
      throw ConfigurationError(msg.str());
    }
    const auto nodes = mesh.element_nodes(e);
    for (int a = 0; a < nloc; ++a) {
      for (int b = 0; b < nloc; ++b) {
        double k = 0.0;
        for (int q = 0; q < nq; ++q)
          k += w * grads[static_cast<std::size_t>(a * nq + q)].dot(A * grads[static_cast<std::size_t>(b * nq + q)]);
        triplets.emplace_back(static_cast<int>(nodes[static_cast<std::size_t>(a)]),
                              static_cast<int>(nodes[static_cast<std::size_t>(b)]), k);
      }
    }
  }
  DiscreteOperator op;
  op.mesh = mesh;
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  op.stiffness.resize(n, n);
  op.stiffness.setFromTriplets(triplets.begin(), triplets.end());
  op.stiffness.makeCompressed();
  op.diagonal = op.stiffness.diagonal();
  return op;
}

namespace {
std::vector<SmallVec> gradient_table(const Mesh& mesh) {
  const int nq = mesh.quad_points();
  std::vector<SmallVec> t(static_cast<std::size_t>(mesh.nodes_per_element() * nq));
  for (int a = 0; a < mesh.nodes_per_element(); ++a)
    for (int q = 0; q < nq; ++q) t[static_cast<std::size_t>(a * nq + q)] = mesh.shape_gradient(a, q);
  return t;
}
}  // namespace

Eigen::VectorXd load_from_flux(const QuadVectors& flux) {
  const Mesh& mesh = flux.mesh;
  const int nloc = mesh.nodes_per_element();
  const int nq = mesh.quad_points();
  const double w = mesh.quad_weight();
  const auto grads = gradient_table(mesh);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.node_count()));
  for (std::size_t e = 0; e < mesh.element_count(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < nq; ++q) {
      const SmallVec f = flux.at(e, q);
      for (int a = 0; a < nloc; ++a)
        b(static_cast<Eigen::Index>(nodes[static_cast<std::size_t>(a)])) -=
            w * grads[static_cast<std::size_t>(a * nq + q)].dot(f);
    }
  }
  return b;
}

ScalarField solve_periodic(const DiscreteOperator& op, const Eigen::VectorXd& rhs, const SolveOptions& options,
                           SolveStats* stats) {
  g_solves.fetch_add(1);
  const Mesh& mesh = op.mesh;
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  if (rhs.size() != n) throw ConfigurationError("rhs size does not match the operator");

  const double scale = rhs.cwiseAbs().sum();
  if (std::abs(rhs.sum()) > 1e-12 * std::max(scale, 1.0)) {
    std::ostringstream msg;
    msg << "rhs is not orthogonal to constants (sum = " << rhs.sum() << ")";
    throw ConsistencyError(msg.str());
  }

  ScalarField x{mesh, Eigen::VectorXd::Zero(n)};
  Eigen::VectorXd b = rhs.array() - rhs.mean();
  const double bnorm = b.norm();
  SolveStats local;
  if (bnorm == 0.0) {
    if (stats) *stats = local;
    return x;
  }
  const std::size_t cap = options.max_iterations != 0
                              ? options.max_iterations
                              : static_cast<std::size_t>(50.0 * std::sqrt(static_cast<double>(n))) + 1000;

  // Jacobi-preconditioned CG restricted to the zero-mean subspace: residual and
  // preconditioned residual are projected, so every iterate stays zero-mean.
  // Convergence is confirmed on the true residual; a drifted recursive
  // residual restarts the iteration from the true one.
  const Eigen::VectorXd inv_diag = op.diagonal.cwiseInverse();
  Eigen::VectorXd r = b;
  Eigen::VectorXd z(n), p(n), q(n);
  std::size_t it = 0;
  double true_residual = 1.0;
  for (;;) {
    z = r.cwiseProduct(inv_diag);
    z.array() -= z.mean();
    p = z;
    double rz = r.dot(z);
    double rnorm = r.norm();
    while (rnorm > options.tol * bnorm && it < cap) {
      q.noalias() = op.stiffness * p;
      const double alpha = rz / p.dot(q);
      x.values.noalias() += alpha * p;
      r.noalias() -= alpha * q;
      r.array() -= r.mean();
      rnorm = r.norm();
      z = r.cwiseProduct(inv_diag);
      z.array() -= z.mean();
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
      ++it;
    }
    x.values.array() -= x.values.mean();
    r = b - op.stiffness * x.values;
    r.array() -= r.mean();
    true_residual = r.norm() / bnorm;
    if (true_residual <= options.tol || it >= cap) break;
  }
  local.iterations = it;
  local.residual = true_residual;
  if (stats) *stats = local;
  if (true_residual > options.tol) {
    std::ostringstream msg;
    msg << "CG did not converge: relative residual " << true_residual << " after " << it << " iterations";
    throw SolverError(msg.str(), true_residual, it);
  }
  return x;
}

QuadVectors gradient_at_quadrature(const ScalarField& field) {
  const Mesh& mesh = field.mesh;
  QuadVectors g(mesh);
  const int nloc = mesh.nodes_per_element();
  const int nq = mesh.quad_points();
  const auto grads = gradient_table(mesh);
  for (std::size_t e = 0; e < mesh.element_count(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int q = 0; q < nq; ++q) {
      SmallVec v = SmallVec::Zero(mesh.dim);
      for (int a = 0; a < nloc; ++a)
        v += field.values(static_cast<Eigen::Index>(nodes[static_cast<std::size_t>(a)])) *
             grads[static_cast<std::size_t>(a * nq + q)];
      g.set(e, q, v);
    }
  }
  return g;
}

std::uint64_t solve_count() { return g_solves.load(); }

}  // namespace hvr
