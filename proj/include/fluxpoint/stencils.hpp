#pragma once

#include <array>
#include <vector>

#include "fluxpoint/cells.hpp"
#include "fluxpoint/cloud.hpp"
#include "fluxpoint/core.hpp"

namespace fluxpoint {

// Monomials up to order 2 in shifted-scaled coordinates: 6 in 2D, 10 in 3D.
struct MonomialBasis {
  int dim = 2;
  int count = 6;
  std::array<std::array<int, 3>, 10> expo{};

  static MonomialBasis for_dim(int dim);
  double eval(int k, const Vec& xi) const;
};

enum class OperatorLabel { Dx, Dy, Dz, Laplacian, Diffusion, Interpolate };

struct StencilRow {
  int owner = -1;
  std::vector<int> members;     // same ordering as the Neighborhood
  std::vector<double> coeffs;
  OperatorLabel label = OperatorLabel::Dx;
  bool constrained = false;     // at least one flux constraint is active
  int dropped_constraints = 0;

  // sum_j c_ij f_j with f indexed by point id
  double apply(const std::vector<double>& field) const {
    double acc = 0;
    for (std::size_t k = 0; k < members.size(); ++k)
      acc += coeffs[k] * field[members[k]];
    return acc;
  }
  template <typename Getter>
  double apply_fn(Getter&& value_of_id) const {
    double acc = 0;
    for (std::size_t k = 0; k < members.size(); ++k)
      acc += coeffs[k] * value_of_id(members[k]);
    return acc;
  }
};

// Equality-constrained minimum-norm problem: min sum_j W_j c_j^2 s.t. Kc = b.
struct ConstraintSystem {
  Eigen::MatrixXd K;
  Eigen::VectorXd b;
  Eigen::VectorXd W;  // per-column objective weights, all positive
};

struct StencilOptions {
  int weight_exponent = 1;          // J = sum W^q c^2, q in {+1, -1}
  double pivot_ratio_limit = 1e12;  // rank decision for the normal system
};

// Gaussian weight exp(-4 d^2 / (h_i^2 + h_j^2)).
double weight(const Point& pi, const Point& pj);

// Consistency rows in shifted-scaled coordinates xi = (x_j - x_i)/h_i; the
// right-hand side holds the scaled derivative of each monomial at xi = 0.
// For the Diffusion label, D phi = div(alpha grad phi) expands to
// alpha_i * Lap(m) + grad(alpha)_i . grad(m) at the owner.
ConstraintSystem consistency_system(const PointCloud& cloud,
                                    const Neighborhood& nbhd,
                                    OperatorLabel label,
                                    const StencilOptions& opts = {},
                                    double alpha_owner = 1.0,
                                    const Vec& grad_alpha_owner = Vec::Zero());

Eigen::VectorXd min_norm_solve(const ConstraintSystem& sys,
                               const StencilOptions& opts = {});

struct PointOperators {
  StencilRow dx, dy, dz, lap;  // dz only populated in 3D
};

PointOperators classical_operators(const PointCloud& cloud,
                                   const Neighborhood& nbhd,
                                   const StencilOptions& opts = {});

// Interpolation row at an arbitrary position (identity operator); members
// are the points within beta*h of x_eval, nearest first.
StencilRow interpolation_row(const PointCloud& cloud, const Vec& x_eval,
                             const StencilOptions& opts = {});

// Control-cell flux of the k-th first-derivative:
// (1/V_i) [ sum_l ((f_i+f_l)/2) n^k_il A_il + boundary f_i n^k_i A_i ].
double flux_rhs_F(const ControlCell& cell, const PointCloud& cloud,
                  const std::vector<double>& f, int k);

// Control-cell diffusion flux:
// (1/V_i) [ sum_l ((a_i+a_l)/2) (phi_l-phi_i)/|x_l-x_i| A_il
//           + boundary a_i (n_i . grad_i phi) A_i ]
// with the boundary gradient taken from the owner's classical rows.
// An empty alpha vector means unit diffusivity.
double flux_rhs_G(const ControlCell& cell, const PointCloud& cloud,
                  const std::vector<double>& phi,
                  const std::vector<double>& alpha,
                  const PointOperators& classical_at_owner);

// Consistency-only diffusion row for div(alpha grad phi); grad(alpha) at the
// owner is evaluated with the classical gradient rows.
StencilRow classical_diffusion_row(const PointCloud& cloud,
                                   const Neighborhood& nbhd,
                                   const std::vector<double>& alpha,
                                   const PointOperators& classical,
                                   const StencilOptions& opts = {});

struct AdvDiffOperators {
  StencilRow dx, dy, diffusion;
};

// Gradient and diffusion rows constrained to conserve the flux of phi at the
// previous time level. Falls back to the classical row when the flux
// constraint is numerically dependent.
AdvDiffOperators fc_operators_advdiff(const PointCloud& cloud,
                                      const Neighborhood& nbhd,
                                      const ControlCell& cell,
                                      const std::vector<double>& phi_n,
                                      const std::vector<double>& alpha,
                                      const PointOperators& classical,
                                      const StencilOptions& opts = {});

struct NseOperators {
  StencilRow dx, dy, lap;
};

// Velocity-conserving operators: the Laplacian row carries one diffusion-flux
// constraint per velocity component, each gradient row carries its velocity
// flux plus the momentum fluxes. Dependent rows are dropped greedily in
// reverse order of addition.
NseOperators fc_operators_nse(const PointCloud& cloud, const Neighborhood& nbhd,
                              const ControlCell& cell,
                              const std::vector<double>& vx_n,
                              const std::vector<double>& vy_n,
                              const PointOperators& classical,
                              const StencilOptions& opts = {});

}  // namespace fluxpoint
