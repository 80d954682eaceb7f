#include "fluxpoint/stencils.hpp"

#include <algorithm>
#include <cmath>

namespace fluxpoint {

MonomialBasis MonomialBasis::for_dim(int dim) {
  MonomialBasis basis;
  basis.dim = dim;
  if (dim == 2) {
    basis.count = 6;
    basis.expo = {{{0, 0, 0},
                   {1, 0, 0},
                   {0, 1, 0},
                   {2, 0, 0},
                   {1, 1, 0},
                   {0, 2, 0}}};
  } else {
    basis.count = 10;
    basis.expo = {{{0, 0, 0},
                   {1, 0, 0},
                   {0, 1, 0},
                   {0, 0, 1},
                   {2, 0, 0},
                   {1, 1, 0},
                   {1, 0, 1},
                   {0, 2, 0},
                   {0, 1, 1},
                   {0, 0, 2}}};
  }
  return basis;
}

double MonomialBasis::eval(int k, const Vec& xi) const {
  double value = 1;
  for (int a = 0; a < dim; ++a)
    for (int e = 0; e < expo[k][a]; ++e) value *= xi[a];
  return value;
}

double weight(const Point& pi, const Point& pj) {
  const double d2 = (pj.x - pi.x).squaredNorm();
  return std::exp(-4.0 * d2 / (pi.h * pi.h + pj.h * pj.h));
}

namespace {

int unscale_power(OperatorLabel label) {
  switch (label) {
    case OperatorLabel::Dx:
    case OperatorLabel::Dy:
    case OperatorLabel::Dz:
      return 1;
    case OperatorLabel::Laplacian:
    case OperatorLabel::Diffusion:
      return 2;
    case OperatorLabel::Interpolate:
      return 0;
  }
  return 0;
}

// Scaled derivative of monomial k at xi = 0 for the given operator.
double monomial_rhs(const MonomialBasis& basis, int k, OperatorLabel label,
                    double h, double alpha_owner, const Vec& grad_alpha) {
  const auto& e = basis.expo[k];
  auto is = [&](int ex, int ey, int ez) {
    return e[0] == ex && e[1] == ey && e[2] == ez;
  };
  switch (label) {
    case OperatorLabel::Interpolate:
      return is(0, 0, 0) ? 1.0 : 0.0;
    case OperatorLabel::Dx:
      return is(1, 0, 0) ? 1.0 : 0.0;
    case OperatorLabel::Dy:
      return is(0, 1, 0) ? 1.0 : 0.0;
    case OperatorLabel::Dz:
      return is(0, 0, 1) ? 1.0 : 0.0;
    case OperatorLabel::Laplacian:
      if (is(2, 0, 0) || is(0, 2, 0) || is(0, 0, 2)) return 2.0;
      return 0.0;
    case OperatorLabel::Diffusion: {
      double lap = (is(2, 0, 0) || is(0, 2, 0) || is(0, 0, 2)) ? 2.0 : 0.0;
      double grad = 0;
      if (is(1, 0, 0)) grad = grad_alpha[0];
      if (is(0, 1, 0)) grad = grad_alpha[1];
      if (is(0, 0, 1)) grad = grad_alpha[2];
      // the gradient term carries one less scaling power than the Laplacian
      return alpha_owner * lap + h * grad;
    }
  }
  return 0;
}

struct FluxConstraint {
  Eigen::VectorXd row;  // member-ordered field values
  double rhs = 0;       // physical flux value
};

// Equilibrate a flux row to unit max-norm; returns false for a vacuous
// all-zero row.
bool equilibrate(FluxConstraint& fc) {
  const double scale = fc.row.cwiseAbs().maxCoeff();
  if (scale <= 1e-300) return false;
  fc.row /= scale;
  fc.rhs /= scale;
  return true;
}

// Solve with the given flux constraints, dropping them in reverse order when
// the constrained system is rank deficient.
StencilRow solve_with_constraints(const PointCloud& cloud,
                                  const Neighborhood& nbhd, OperatorLabel label,
                                  const StencilOptions& opts,
                                  std::vector<FluxConstraint> fluxes,
                                  double alpha_owner = 1.0,
                                  const Vec& grad_alpha = Vec::Zero()) {
  const Point& owner = cloud.points[nbhd.owner];
  ConstraintSystem base =
      consistency_system(cloud, nbhd, label, opts, alpha_owner, grad_alpha);
  const int m0 = static_cast<int>(base.K.rows());
  const int n = static_cast<int>(base.K.cols());
  const int power = unscale_power(label);
  const double hs = std::pow(owner.h, power);

  StencilRow row;
  row.owner = nbhd.owner;
  row.members = nbhd.members;
  row.label = label;

  // vacuous rows are discarded up front
  std::vector<FluxConstraint> active;
  for (FluxConstraint& fc : fluxes) {
    FluxConstraint scaled = fc;
    scaled.rhs *= hs;  // constraint on the scaled coefficients
    if (equilibrate(scaled)) active.push_back(std::move(scaled));
    else ++row.dropped_constraints;
  }

  while (true) {
    ConstraintSystem sys;
    const int m = m0 + static_cast<int>(active.size());
    sys.K.resize(m, n);
    sys.b.resize(m);
    sys.K.topRows(m0) = base.K;
    sys.b.head(m0) = base.b;
    for (int k = 0; k < static_cast<int>(active.size()); ++k) {
      sys.K.row(m0 + k) = active[k].row.transpose();
      sys.b(m0 + k) = active[k].rhs;
    }
    sys.W = base.W;
    try {
      Eigen::VectorXd c = min_norm_solve(sys, opts);
      row.coeffs.assign(c.data(), c.data() + n);
      for (double& v : row.coeffs) v /= hs;
      row.constrained = !active.empty();
      return row;
    } catch (const IllConditioned&) {
      if (active.empty()) throw;
      active.pop_back();
      ++row.dropped_constraints;
    }
  }
}

}  // namespace

ConstraintSystem consistency_system(const PointCloud& cloud,
                                    const Neighborhood& nbhd,
                                    OperatorLabel label,
                                    const StencilOptions& opts,
                                    double alpha_owner,
                                    const Vec& grad_alpha_owner) {
  const MonomialBasis basis = MonomialBasis::for_dim(cloud.dim);
  const int n = nbhd.size();
  if (n < basis.count)
    throw InsufficientSupport(nbhd.owner, n, basis.count);
  if (label == OperatorLabel::Dz && cloud.dim != 3)
    throw Error("Dz is only defined in 3D");

  const Point& owner = cloud.points[nbhd.owner];
  ConstraintSystem sys;
  sys.K.resize(basis.count, n);
  sys.b.resize(basis.count);
  sys.W.resize(n);
  for (int j = 0; j < n; ++j) {
    const Point& pj = cloud.points[nbhd.members[j]];
    const Vec xi = (pj.x - owner.x) / owner.h;
    for (int k = 0; k < basis.count; ++k) sys.K(k, j) = basis.eval(k, xi);
    const double w = weight(owner, pj);
    sys.W(j) = opts.weight_exponent >= 0 ? w : 1.0 / w;
  }
  for (int k = 0; k < basis.count; ++k)
    sys.b(k) = monomial_rhs(basis, k, label, owner.h, alpha_owner,
                            grad_alpha_owner);
  return sys;
}

Eigen::VectorXd min_norm_solve(const ConstraintSystem& sys,
                               const StencilOptions& opts) {
  const int m = static_cast<int>(sys.K.rows());
  const int n = static_cast<int>(sys.K.cols());
  if (m > n)
    throw IllConditioned("minimum-norm system has more constraints than unknowns");
  if ((sys.W.array() <= 0).any())
    throw IllConditioned("non-positive objective weight");

  const Eigen::VectorXd d = sys.W.cwiseInverse();
  Eigen::MatrixXd kd = sys.K * d.asDiagonal();
  Eigen::MatrixXd gram(m, m);
  gram.noalias() = kd * sys.K.transpose();

  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd diag = ldlt.vectorD();
  const double dmax = diag.maxCoeff();
  const double dmin = diag.minCoeff();
  if (!(dmin > 0) || dmax / dmin > opts.pivot_ratio_limit)
    throw IllConditioned("pivot ratio exceeds limit in constrained solve");

  const Eigen::VectorXd y = ldlt.solve(sys.b);
  Eigen::VectorXd c = d.asDiagonal() * (sys.K.transpose() * y);

  const double resid = (sys.K * c - sys.b).cwiseAbs().maxCoeff();
  if (resid > 1e-10 * (1.0 + sys.b.cwiseAbs().maxCoeff()))
    throw IllConditioned("constraint residual too large");
  return c;
}

PointOperators classical_operators(const PointCloud& cloud,
                                   const Neighborhood& nbhd,
                                   const StencilOptions& opts) {
  // one consistency matrix serves every label; only the rhs changes
  ConstraintSystem sys = consistency_system(cloud, nbhd, OperatorLabel::Dx, opts);
  const MonomialBasis basis = MonomialBasis::for_dim(cloud.dim);
  const Point& owner = cloud.points[nbhd.owner];
  const int m = static_cast<int>(sys.K.rows());
  const int n = static_cast<int>(sys.K.cols());

  const Eigen::VectorXd d = sys.W.cwiseInverse();
  Eigen::MatrixXd kd = sys.K * d.asDiagonal();
  Eigen::MatrixXd gram(m, m);
  gram.noalias() = kd * sys.K.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  const Eigen::VectorXd diag = ldlt.vectorD();
  if (!(diag.minCoeff() > 0) ||
      diag.maxCoeff() / diag.minCoeff() > opts.pivot_ratio_limit)
    throw IllConditioned("pivot ratio exceeds limit at point " +
                         std::to_string(nbhd.owner));

  auto solve_label = [&](OperatorLabel label) {
    Eigen::VectorXd b(m);
    for (int k = 0; k < m; ++k)
      b(k) = monomial_rhs(basis, k, label, owner.h, 1.0, Vec::Zero());
    const Eigen::VectorXd y = ldlt.solve(b);
    Eigen::VectorXd c = d.asDiagonal() * (sys.K.transpose() * y);
    if ((sys.K * c - b).cwiseAbs().maxCoeff() >
        1e-10 * (1.0 + b.cwiseAbs().maxCoeff()))
      throw IllConditioned("constraint residual too large at point " +
                           std::to_string(nbhd.owner));
    const double hs = std::pow(owner.h, unscale_power(label));
    StencilRow row;
    row.owner = nbhd.owner;
    row.members = nbhd.members;
    row.label = label;
    row.coeffs.resize(n);
    for (int j = 0; j < n; ++j) row.coeffs[j] = c(j) / hs;
    return row;
  };

  PointOperators ops;
  ops.dx = solve_label(OperatorLabel::Dx);
  ops.dy = solve_label(OperatorLabel::Dy);
  if (cloud.dim == 3) ops.dz = solve_label(OperatorLabel::Dz);
  ops.lap = solve_label(OperatorLabel::Laplacian);
  return ops;
}

StencilRow interpolation_row(const PointCloud& cloud, const Vec& x_eval,
                             const StencilOptions& opts) {
  const double h = cloud.h_ref > 0 ? cloud.h_ref : cloud.points.front().h;
  std::vector<int> found;
  cloud.index.query(cloud.points, x_eval, cloud.params.beta * h, found);
  const MonomialBasis basis = MonomialBasis::for_dim(cloud.dim);
  if (static_cast<int>(found.size()) < basis.count)
    throw InsufficientSupport(-1, static_cast<int>(found.size()), basis.count);

  std::vector<std::pair<double, int>> ordered;
  ordered.reserve(found.size());
  for (int id : found)
    ordered.emplace_back((cloud.points[id].x - x_eval).norm(), id);
  std::sort(ordered.begin(), ordered.end());

  const int n = static_cast<int>(ordered.size());
  ConstraintSystem sys;
  sys.K.resize(basis.count, n);
  sys.b.setZero(basis.count);
  sys.b(0) = 1.0;  // value reproduction at x_eval
  sys.W.resize(n);
  for (int j = 0; j < n; ++j) {
    const Point& pj = cloud.points[ordered[j].second];
    const Vec xi = (pj.x - x_eval) / h;
    for (int k = 0; k < basis.count; ++k) sys.K(k, j) = basis.eval(k, xi);
    const double w =
        std::exp(-4.0 * (pj.x - x_eval).squaredNorm() / (h * h + pj.h * pj.h));
    sys.W(j) = opts.weight_exponent >= 0 ? w : 1.0 / w;
  }
  const Eigen::VectorXd c = min_norm_solve(sys, opts);

  StencilRow row;
  row.owner = -1;
  row.label = OperatorLabel::Interpolate;
  row.members.resize(n);
  row.coeffs.resize(n);
  for (int j = 0; j < n; ++j) {
    row.members[j] = ordered[j].second;
    row.coeffs[j] = c(j);
  }
  return row;
}

// declared in cloud.hpp
double mls_interpolate(const PointCloud& cloud, const Vec& x_new,
                       const std::function<double(const Point&)>& field) {
  const StencilRow row = interpolation_row(cloud, x_new);
  double acc = 0;
  for (std::size_t k = 0; k < row.members.size(); ++k)
    acc += row.coeffs[k] * field(cloud.points[row.members[k]]);
  return acc;
}

std::vector<double> mls_interpolate_many(
    const PointCloud& cloud, const Vec& x_new,
    const std::vector<std::function<double(const Point&)>>& fields) {
  const StencilRow row = interpolation_row(cloud, x_new);
  std::vector<double> out(fields.size(), 0.0);
  for (std::size_t f = 0; f < fields.size(); ++f)
    for (std::size_t k = 0; k < row.members.size(); ++k)
      out[f] += row.coeffs[k] * fields[f](cloud.points[row.members[k]]);
  return out;
}

namespace {

template <typename Getter>
double flux_F_impl(const ControlCell& cell, Getter&& value, int k) {
  const double fi = value(cell.owner);
  double acc = 0;
  for (const CellFace& f : cell.faces) {
    if (f.neighbor == kBoundaryFace)
      acc += fi * f.normal[k] * f.area;
    else
      acc += 0.5 * (fi + value(f.neighbor)) * f.normal[k] * f.area;
  }
  return acc / cell.volume;
}

template <typename Getter, typename AlphaGetter>
double flux_G_impl(const ControlCell& cell, const PointCloud& cloud,
                   Getter&& value, AlphaGetter&& alpha,
                   const PointOperators& classical) {
  const int i = cell.owner;
  const Vec& xi = cloud.points[i].x;
  const double fi = value(i);
  const double ai = alpha(i);
  double acc = 0;
  for (const CellFace& f : cell.faces) {
    if (f.neighbor == kBoundaryFace) {
      Vec grad(classical.dx.apply_fn(value), classical.dy.apply_fn(value),
               cloud.dim == 3 ? classical.dz.apply_fn(value) : 0.0);
      acc += ai * f.normal.dot(grad) * f.area;
    } else {
      const double dist = (cloud.points[f.neighbor].x - xi).norm();
      acc += 0.5 * (ai + alpha(f.neighbor)) *
             (value(f.neighbor) - fi) / dist * f.area;
    }
  }
  return acc / cell.volume;
}

}  // namespace

double flux_rhs_F(const ControlCell& cell, const PointCloud& cloud,
                  const std::vector<double>& f, int k) {
  (void)cloud;
  return flux_F_impl(cell, [&](int id) { return f[id]; }, k);
}

double flux_rhs_G(const ControlCell& cell, const PointCloud& cloud,
                  const std::vector<double>& phi,
                  const std::vector<double>& alpha,
                  const PointOperators& classical_at_owner) {
  auto a = [&](int id) { return alpha.empty() ? 1.0 : alpha[id]; };
  return flux_G_impl(cell, cloud, [&](int id) { return phi[id]; }, a,
                     classical_at_owner);
}

StencilRow classical_diffusion_row(const PointCloud& cloud,
                                   const Neighborhood& nbhd,
                                   const std::vector<double>& alpha,
                                   const PointOperators& classical,
                                   const StencilOptions& opts) {
  const double alpha_i = alpha.empty() ? 1.0 : alpha[nbhd.owner];
  Vec grad_alpha = Vec::Zero();
  if (!alpha.empty()) {
    grad_alpha[0] = classical.dx.apply(alpha);
    grad_alpha[1] = classical.dy.apply(alpha);
    if (cloud.dim == 3) grad_alpha[2] = classical.dz.apply(alpha);
  }
  return solve_with_constraints(cloud, nbhd, OperatorLabel::Diffusion, opts, {},
                                alpha_i, grad_alpha);
}

AdvDiffOperators fc_operators_advdiff(const PointCloud& cloud,
                                      const Neighborhood& nbhd,
                                      const ControlCell& cell,
                                      const std::vector<double>& phi_n,
                                      const std::vector<double>& alpha,
                                      const PointOperators& classical,
                                      const StencilOptions& opts) {
  const int n = nbhd.size();
  Eigen::VectorXd phi_members(n);
  for (int j = 0; j < n; ++j) phi_members(j) = phi_n[nbhd.members[j]];

  auto grad_row = [&](OperatorLabel label, int k) {
    FluxConstraint fc;
    fc.row = phi_members;
    fc.rhs = flux_rhs_F(cell, cloud, phi_n, k);
    return solve_with_constraints(cloud, nbhd, label, opts, {fc});
  };

  AdvDiffOperators ops;
  ops.dx = grad_row(OperatorLabel::Dx, 0);
  ops.dy = grad_row(OperatorLabel::Dy, 1);

  const double alpha_i = alpha.empty() ? 1.0 : alpha[nbhd.owner];
  Vec grad_alpha = Vec::Zero();
  if (!alpha.empty()) {
    grad_alpha[0] = classical.dx.apply(alpha);
    grad_alpha[1] = classical.dy.apply(alpha);
    if (cloud.dim == 3) grad_alpha[2] = classical.dz.apply(alpha);
  }
  FluxConstraint fc;
  fc.row = phi_members;
  fc.rhs = flux_rhs_G(cell, cloud, phi_n, alpha, classical);
  ops.diffusion = solve_with_constraints(cloud, nbhd, OperatorLabel::Diffusion,
                                         opts, {fc}, alpha_i, grad_alpha);
  return ops;
}

NseOperators fc_operators_nse(const PointCloud& cloud, const Neighborhood& nbhd,
                              const ControlCell& cell,
                              const std::vector<double>& vx_n,
                              const std::vector<double>& vy_n,
                              const PointOperators& classical,
                              const StencilOptions& opts) {
  const int n = nbhd.size();
  Eigen::VectorXd vx_m(n), vy_m(n);
  for (int j = 0; j < n; ++j) {
    vx_m(j) = vx_n[nbhd.members[j]];
    vy_m(j) = vy_n[nbhd.members[j]];
  }

  NseOperators ops;

  // Laplacian: one unit-diffusivity flux constraint per velocity component
  {
    std::vector<FluxConstraint> fcs(2);
    fcs[0].row = vx_m;
    fcs[0].rhs = flux_rhs_G(cell, cloud, vx_n, {}, classical);
    fcs[1].row = vy_m;
    fcs[1].rhs = flux_rhs_G(cell, cloud, vy_n, {}, classical);
    ops.lap = solve_with_constraints(cloud, nbhd, OperatorLabel::Laplacian,
                                     opts, std::move(fcs));
  }

  // Gradient rows: velocity flux first, then the momentum fluxes, so the
  // momentum rows are the first to be dropped on rank deficiency.
  auto gradient = [&](OperatorLabel label, int k, const Eigen::VectorXd& vk_m,
                      const std::vector<double>& vk) {
    std::vector<FluxConstraint> fcs(3);
    fcs[0].row = vk_m;
    fcs[0].rhs = flux_rhs_F(cell, cloud, vk, k);
    fcs[1].row = vk_m.cwiseProduct(vx_m);
    fcs[1].rhs = flux_F_impl(cell, [&](int id) { return vk[id] * vx_n[id]; }, k);
    fcs[2].row = vk_m.cwiseProduct(vy_m);
    fcs[2].rhs = flux_F_impl(cell, [&](int id) { return vk[id] * vy_n[id]; }, k);
    return solve_with_constraints(cloud, nbhd, label, opts, std::move(fcs));
  };
  ops.dx = gradient(OperatorLabel::Dx, 0, vx_m, vx_n);
  ops.dy = gradient(OperatorLabel::Dy, 1, vy_m, vy_n);
  return ops;
}

}  // namespace fluxpoint
