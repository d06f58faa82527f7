// SPDX-License-Identifier: Apache-2.0

#ifndef CRB_UQ_MC_HPP
#define CRB_UQ_MC_HPP

#include <cstdint>
#include <span>
#include <vector>
#include <Eigen/Dense>

#include "crb/kl_field.hpp"
#include "crb/reduced_basis.hpp"

namespace crb
{

// Sample mean with pairwise summation.
double mc_mean(std::span<const double> values);

// Unbiased sample variance, 1/(M-1) normalization. Requires M >= 2.
double mc_variance(std::span<const double> values);

// 1.96 sqrt(V_M / M).
double clt_halfwidth(std::span<const double> values);

// Bound on |V_M(S) - V_M(S')| over all S' with |S_m - S'_m| <= e_m:
// 1/(M-1) sum_m (e_m + e_bar)(2|S_m - E_M| + e_m + e_bar).
double combine_variance_bound(std::span<const double> outputs, std::span<const double> bounds);

//
// Bound on |s_full(y) - s_{K,N}(y)|, the output error of the N-term reduced solution of
// the K-term truncated problem measured against the truth solution with all modes. With
// r the residual of the full problem at the reduced solution u_K,
//   s_full - s_{K,N} = a(e, e) + r(u_K),  0 <= a(e, e) <= ||r||^2 / alpha_LB(full),
// so e = ||r||^2/alpha_LB + |r(u_K)|. `online` must be the reduced solution at the
// truncated parameter and `mu_full` the untruncated one.
//
double total_error_bound(const ReducedBasis &rb, const ParamVec &mu_full,
                         const OnlineSolution &online);

struct MCResult
{
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t m = 0;
  double mean = 0.0;
  double variance = 0.0;
  double delta_e = 0.0;
  double delta_v = 0.0;
  double clt_halfwidth = 0.0;
  std::vector<double> outputs;
  std::vector<double> per_sample_bounds;
  std::vector<double> rb_bounds;  // standard output bound of the truncated problem
  std::size_t rejections = 0;
};

struct MCOptions
{
  std::size_t k_trunc = 20;
  std::size_t m = 10000;
  std::size_t n = 0;  // basis functions used; 0 means all
  std::uint64_t seed = 0;
  double sigma0 = 2.0;
  // Realizations are also required to be admissible when truncated to these levels, so
  // that runs at several K share the same draws.
  std::vector<std::size_t> shared_levels;
};

// M realizations with all k_max amplitudes, admissible at k_max, k_trunc and every shared
// level. Realization i depends only on (seed, i).
std::vector<Eigen::VectorXd> draw_realizations(const KLBasis &kl, std::size_t m, std::uint64_t seed,
                                               const std::vector<std::size_t> &levels,
                                               std::size_t *rejections = nullptr);

MCResult mc_outputs(const ReducedBasis &rb, const KLBasis &kl, const MCOptions &options);

// Greedy trial set for the heat sink: realization i is truncated to
// truncations[i % truncations.size()] modes (k_max when the list is empty).
std::vector<ParamVec> heat_sink_trial(const KLBasis &kl, std::size_t count, std::uint64_t seed,
                                      double sigma0, const std::vector<std::size_t> &truncations);

// Same estimator on precomputed realizations.
MCResult mc_outputs(const ReducedBasis &rb, const KLBasis &kl,
                    const std::vector<Eigen::VectorXd> &realizations, std::size_t k_trunc,
                    std::size_t n, double sigma0);

// Rows (N, K, E_M, V_M, delta_E, delta_V, clt_halfwidth) over all requested N and K, on one
// shared set of realizations.
std::vector<MCResult> uq_sweep(const ReducedBasis &rb, const KLBasis &kl,
                               const std::vector<std::size_t> &ks, const std::vector<std::size_t> &ns,
                               std::size_t m, std::uint64_t seed, double sigma0);

}  // namespace crb

#endif  // CRB_UQ_MC_HPP
