// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_REDUCED_BASIS_HPP
#define CRB_REDUCED_BASIS_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>
#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "crb/affine_form.hpp"

namespace crb
{

//
// Reduced basis for an affine form: X-orthonormal snapshot basis, the reduced affine
// terms and the Gram table of residual Riesz representers. Everything needed online is
// independent of the truth dimension except `basis`, which is kept for reconstruction.
//
struct ReducedBasis
{
  std::uint64_t form_hash = 0;
  ThetaMap theta;
  Eigen::MatrixXd basis;  // truth size x N
  std::vector<ParamVec> selected_mu;
  std::vector<Eigen::MatrixXd> reduced_stiffness;  // Q matrices, N x N
  Eigen::VectorXd reduced_load;
  // X inner products of the representers of the load (slot 0) and of B_q zeta_n
  // (slot 1 + n Q + q). A leading block of size 1 + n Q belongs to the first n vectors.
  Eigen::MatrixXd riesz_gram;
  Eigen::VectorXd theta_ref;
  // Greedy: maximum output bound over the trial set for basis sizes 1, 2, ...
  std::vector<double> greedy_history;

  std::size_t size() const { return static_cast<std::size_t>(basis.cols()); }
  std::size_t q_count() const { return reduced_stiffness.size(); }
  static std::size_t slot(std::size_t q, std::size_t n, std::size_t Q) { return 1 + n * Q + q; }
};

struct OnlineSolution
{
  ParamVec mu;
  Eigen::VectorXd coefficients;
  double output = 0.0;
  double residual_sq = 0.0;  // dual norm squared of the residual
  double energy_bound = 0.0;
  double output_bound = 0.0;
  double alpha_lb = 0.0;
};

// Reduced matrix sum_q theta_q C_q restricted to the first n basis functions.
Eigen::MatrixXd reduced_matrix(const ReducedBasis &rb, const Eigen::VectorXd &theta,
                               std::size_t n);

// ||r||_X'^2 for r = l - sum_q theta_q B_q (zeta c), from the Gram table. Clipped at 0.
double residual_dual_norm_sq(const ReducedBasis &rb, const Eigen::VectorXd &theta,
                             const Eigen::VectorXd &coefficients);

// Galerkin solve on the first n basis functions (n = 0 means all) with output bounds.
OnlineSolution online_solve(const ReducedBasis &rb, const ParamVec &mu, std::size_t n = 0);

// Reduced condition number estimate above which the online system counts as singular.
inline constexpr double kOnlineConditionLimit = 1e12;

struct GramSchmidtResult
{
  Eigen::MatrixXd basis;
  std::vector<std::size_t> rejected;
};

// Modified Gram-Schmidt in the x_gram inner product with one reorthogonalization pass.
// Vectors left with less than drop_tol of their original X norm are rejected.
GramSchmidtResult gram_schmidt(const std::vector<Eigen::VectorXd> &snapshots,
                               const SparseMatrix &x_gram, double drop_tol = 1e-10);

// Incremental offline state. Holds the X factorization and the representers so the basis
// can be extended one snapshot at a time, by the greedy loop or by online enrichment.
class RBBuilder
{
public:
  explicit RBBuilder(const AffineForm &form);

  // Orthonormalizes u against the basis and appends it. Returns false on rejection.
  bool add_snapshot(const ParamVec &mu, const Eigen::VectorXd &u, double drop_tol = 1e-10);

  // Solves truth at mu and appends the snapshot.
  bool add_parameter(const ParamVec &mu);

  // Online query with bootstrap enrichment: when the output bound exceeds eps the truth
  // solution at mu is added to the basis and the query is answered again.
  OnlineSolution solve_or_enrich(const ParamVec &mu, double eps);

  const ReducedBasis &basis() const { return rb_; }
  ReducedBasis &basis() { return rb_; }
  const AffineForm &form() const { return *form_; }

private:
  const AffineForm *form_;
  Eigen::SimplicialLDLT<SparseMatrix> x_solver_;
  std::vector<Eigen::VectorXd> representers_;  // same slot order as riesz_gram
  ReducedBasis rb_;
};

struct GreedyOptions
{
  double eps = 1e-8;
  std::size_t n_max = 15;
  std::uint64_t seed = 0;
  // Start from argmax |s| over the first few trial points instead of a random one.
  bool init_max_output = false;
  std::size_t init_output_probe = 10;
};

// Greedy sampling over a trial set on the output bound. Stops when the max bound falls to
// eps, at n_max, or when the selected snapshot is already in the span.
ReducedBasis greedy_offline(const AffineForm &form, const std::vector<ParamVec> &trial,
                            const GreedyOptions &options);

// Same as greedy_offline, continuing from an existing builder state.
void greedy_extend(RBBuilder &builder, const std::vector<ParamVec> &trial,
                   const GreedyOptions &options);

// Uniform samples in the parameter box (log-uniform on strictly positive scalar ranges),
// rejecting non-admissible points.
std::vector<ParamVec> sample_parameters(const ThetaMap &theta, std::size_t count,
                                        std::mt19937_64 &rng);

struct EffectivityRow
{
  ParamVec mu;
  double truth = 0.0;
  double reduced = 0.0;
  double error = 0.0;
  double bound = 0.0;
  std::optional<double> effectivity;  // empty when the error is below the guard
  double ceiling = 0.0;
  bool ok = true;
};

inline constexpr double kEffectivityErrorGuard = 1e-12;
// Absolute roundoff allowance when checking |error| <= bound.
inline constexpr double kBoundSlack = 1e-12;

// Truth versus reduced outputs with effectivities and the (gamma_UB/alpha_LB)^2 ceiling.
std::vector<EffectivityRow> effectivity_report(const AffineForm &form, const ReducedBasis &rb,
                                               const std::vector<ParamVec> &sample,
                                               std::size_t n = 0);

}  // namespace crb

#endif  // CRB_REDUCED_BASIS_HPP
