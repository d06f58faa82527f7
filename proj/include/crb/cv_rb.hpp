// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_CV_RB_HPP
#define CRB_CV_RB_HPP

#include <cstdint>
#include <string>
#include <vector>
#include <Eigen/Dense>

#include "crb/sde.hpp"

namespace crb
{

enum class CVKind
{
  Alg1,  // controls Z^{lambda_i} - E_{M_large}[Z^{lambda_i}] on common random numbers
  Alg2   // controls int grad u^{lambda_i} . sigma dB along the online path
};

std::string to_string(CVKind k);
CVKind parse_cv_kind(const std::string &s);

enum class Alg2Control
{
  Kolmogorov,    // 1D finite-difference solve of the backward Kolmogorov equation
  HookeanExact   // closed-form Hookean dumbbell solution
};

std::string to_string(Alg2Control c);
Alg2Control parse_alg2_control(const std::string &s);

struct CVBasis
{
  CVKind kind = CVKind::Alg1;
  std::vector<ParamVec> selected;
  std::vector<double> alg1_refs;
  std::vector<double> alg1_ref_halfwidths;  // 95% CLT half-widths of the references
  std::size_t m_large = 0;
  Alg2Control alg2_control = Alg2Control::HookeanExact;
  std::vector<Control> alg2_controls;
  std::size_t m_small = 0;
  std::size_t steps = 0;
  std::vector<double> trial_history;  // max_lambda eps_i(lambda) at each greedy step
  std::uint64_t seed = 0;

  std::size_t size() const { return selected.size(); }
};

struct CVEstimate
{
  ParamVec lambda;
  std::size_t n = 0;
  Eigen::VectorXd alpha_star;
  double mean = 0.0;          // E_M[Z - Y alpha]
  double variance = 0.0;      // Var_M[Z - Y alpha]
  double raw_mean = 0.0;      // E_M[Z]
  double raw_variance = 0.0;  // Var_M[Z]
  double ratio = 0.0;         // raw_variance / variance
  double clt_halfwidth = 0.0;
  double raw_clt_halfwidth = 0.0;
  double normalized_variance = 0.0;      // Var_M[Z - Y alpha] / E_M[Z - Y alpha]^2
  double raw_normalized_variance = 0.0;  // Var_M[Z] / E_M[Z]^2
  std::size_t grid_outside = 0;
};

// Empirical covariances in product-moment form, C_ij = E_M[Y_i Y_j] - E_M[Y_i] E_M[Y_j] and
// b_j = E_M[Z Y_j] - E_M[Z] E_M[Y_j].
struct CovarianceSystem
{
  Eigen::MatrixXd c;
  Eigen::VectorXd b;
};
CovarianceSystem covariance_system(std::span<const double> z, const Eigen::MatrixXd &controls);

// Minimizer of Var_M(Z - Y alpha), alpha* = C^+ b, computed from the singular value
// decomposition of the centered control table; singular values below 1e-10 times the
// largest are dropped. Requires m >= N + 1.
CVEstimate solve_combination(std::span<const double> z, const Eigen::MatrixXd &controls);
constexpr double kCombinationCutoff = 1e-10;

// Var_M(Z - Y alpha) for a given alpha, 1/(M-1) normalization.
double combination_variance(std::span<const double> z, const Eigen::MatrixXd &controls,
                            const Eigen::VectorXd &alpha);

// Control tables for an online parameter. Alg1 columns depend only on the increments, so
// they are computed once per ensemble and shared across lambda.
struct CVOnlineContext
{
  const CVBasis *basis = nullptr;
  StoredIncrements increments;
  Eigen::MatrixXd alg1_controls;  // m x N, Alg1 only
};

CVOnlineContext prepare_online(const CVBasis &basis, const SDEModel &model, const IncrementSource &src);

// Z^lambda and the m x N control table on the context's increments.
Eigen::MatrixXd build_controls(const CVBasis &basis, const SDEModel &model, const ParamVec &lambda,
                               const CVOnlineContext &ctx, std::vector<double> &z,
                               std::size_t *outside = nullptr);

// Estimate with the first n basis functions (all when n = 0).
CVEstimate online_estimate(const CVBasis &basis, const SDEModel &model, const ParamVec &lambda,
                           const CVOnlineContext &ctx, std::size_t n = 0);

// Fresh m-path ensemble from `seed`.
CVEstimate online_estimate(const CVBasis &basis, const SDEModel &model, const ParamVec &lambda,
                           std::size_t m, std::uint64_t seed, std::size_t n = 0);

struct CVGreedyOptions
{
  CVKind kind = CVKind::Alg1;
  std::size_t n_max = 20;
  std::size_t m_small = 1000;
  std::size_t m_large = 100000;
  std::size_t steps = 100;
  double eps = 0.0;
  std::uint64_t seed = 0;
  Alg2Control alg2_control = Alg2Control::HookeanExact;
  KolmogorovGrid grid;
  std::size_t grid_t_steps = 0;  // 0 means the simulation steps
};

CVBasis greedy_offline_cv(const SDEModel &model, const std::vector<ParamVec> &trial,
                          const CVGreedyOptions &options);

// Uniform draws on the box [lo, hi] per coordinate.
std::vector<ParamVec> sample_box(std::size_t count, const ParamVec &lo, const ParamVec &hi, std::uint64_t seed);

struct CVSweepRow
{
  std::size_t n = 0;
  double min_ratio = 0.0;
  double mean_ratio = 0.0;
  double max_ratio = 0.0;
  double geomean_ratio = 0.0;
  double min_normalized = 0.0;  // Var_M[Z - Y]/E_M[Z - Y]^2 over the test sample
  double mean_normalized = 0.0;
  double max_normalized = 0.0;
  double mean_raw_normalized = 0.0;
};

// Ratio statistics over the test sample for each requested basis size. Test parameter j
// uses its own ensemble seeded by (seed, j).
std::vector<CVSweepRow> cv_sweep(const CVBasis &basis, const SDEModel &model, const std::vector<ParamVec> &test,
                                 const std::vector<std::size_t> &ns, std::size_t m, std::uint64_t seed,
                                 std::vector<CVEstimate> *full_estimates = nullptr);

}  // namespace crb

#endif  // CRB_CV_RB_HPP
