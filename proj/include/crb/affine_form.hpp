// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_AFFINE_FORM_HPP
#define CRB_AFFINE_FORM_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>
#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "crb/common.hpp"
#include "crb/mesh.hpp"

namespace crb
{

using SparseMatrix = Eigen::SparseMatrix<double>;

enum class ModelKind
{
  ThermalBlock,  // -div((1 + mu 1_block) grad u) = 1, u = 0 on the boundary
  TSinkRobin     // heat sink with unit flux on GAMMA_R and random Robin on GAMMA_B
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string &s);

struct ParamRange
{
  double lo = 0.0;
  double hi = 0.0;
  double midpoint() const { return 0.5 * (lo + hi); }
  bool fixed() const { return lo == hi; }
};

// Maps a parameter vector to the Q affine coefficients, and carries what is needed to
// certify coercivity and continuity from the coefficients alone.
//
// THERMAL_BLOCK:  mu = (mu_1),                theta = (1, mu_1).
// T_SINK_ROBIN:   mu = (sigma0, b, y_1..y_K), theta = (1, sigma0, b, b y_1, ..., b y_K),
//                 or (1, b, b y_1, ..., b y_K) with the two diffusion blocks merged when
//                 sigma0 is fixed.
//
// Coercive terms are positive semidefinite with positive coefficients. Fluctuation terms
// (the KL modes) are indefinite; they are controlled through the pointwise admissibility
// constraint 1 + sum_k y_k Phi_k/G >= floor on the boundary quadrature nodes.
struct ThetaMap
{
  ModelKind kind = ModelKind::ThermalBlock;
  std::vector<ParamRange> ranges;
  ParamVec reference;
  bool merged_diffusion = false;
  std::size_t kl_terms = 0;
  // Rows: boundary quadrature nodes. Columns: Phi_k / G at that node.
  Eigen::MatrixXd mode_ratio;
  double admissibility_floor = 0.5;

  std::size_t param_dim() const { return ranges.size(); }
  std::size_t q_count() const;
  Eigen::VectorXd evaluate(const ParamVec &mu) const;

  // Index of the mean Biot term, or -1 when there is none.
  int mean_term() const;
  std::size_t first_fluctuation_term() const;
  bool is_fluctuation(std::size_t q) const;

  // Relative boundary field b/(b G) at each quadrature node. Empty for THERMAL_BLOCK.
  Eigen::VectorXd relative_field(const ParamVec &mu) const;

  // Throws NumericalError when mu is not admissible.
  void check_admissible(const ParamVec &mu) const;
  bool admissible(const ParamVec &mu) const;

  // Equivalent parameter vector with KL amplitudes beyond k set to zero.
  ParamVec truncate(const ParamVec &mu, std::size_t k) const;
};

// Coercivity lower bound alpha_LB(mu) for the X inner product B(mu_ref):
// min over coercive terms of c_q theta_q(mu)/theta_q(mu_ref), with c_q = floor for the
// mean Biot term when fluctuations are present and 1 otherwise.
double coercivity_lb(const ThetaMap &theta, const ParamVec &mu);

// Continuity upper bound gamma_UB(mu): max over coercive terms of theta ratios, with the
// mean Biot ratio scaled by the largest relative boundary field.
double continuity_ub(const ThetaMap &theta, const ParamVec &mu);

// KL data evaluated on the GAMMA_B quadrature of the mesh, in the same node order.
struct BoundaryField
{
  Eigen::VectorXd g;      // G at the nodes
  Eigen::MatrixXd modes;  // Phi_k at the nodes, one column per mode
  std::vector<ParamRange> y_ranges;
};

struct ModelSpec
{
  ModelKind kind = ModelKind::ThermalBlock;
  // THERMAL_BLOCK
  ParamRange mu_range{0.1, 10.0};
  std::optional<double> reference_mu;
  // T_SINK_ROBIN
  ParamRange sigma0{2.0, 2.0};
  ParamRange b_bar{0.5, 0.5};
  BoundaryField field;
};

struct AffineForm
{
  ThetaMap theta;
  std::vector<SparseMatrix> terms;
  Eigen::VectorXd load;
  SparseMatrix x_gram;
  // Mesh node of each degree of freedom (Dirichlet nodes are eliminated).
  std::vector<int> dof_nodes;

  std::size_t q_count() const { return terms.size(); }
  std::size_t size() const { return static_cast<std::size_t>(load.size()); }
  SparseMatrix assemble(const ParamVec &mu) const;
  std::uint64_t provenance_hash() const;
};

AffineForm assemble_affine(const Mesh &mesh, const ModelSpec &model);

// Assembles B(mu) directly with the coefficient substituted inside the element loops,
// without going through the affine terms. Used to check the decomposition.
SparseMatrix assemble_direct(const Mesh &mesh, const ModelSpec &model, const ParamVec &mu);

struct TruthSolution
{
  ParamVec mu;
  Eigen::VectorXd coefficients;
  double output = 0.0;
};

// Sparse LDL^T solve of B(mu) U = load; output = load^T U.
TruthSolution solve_truth(const AffineForm &form, const ParamVec &mu);

// Relative residual tolerance accepted from the sparse direct solve.
inline constexpr double kTruthResidualTol = 1e-10;

}  // namespace crb

#endif  // CRB_AFFINE_FORM_HPP
