// SPDX-License-Identifier: Apache-2.0

#include "crb/uq_mc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace crb
{

namespace
{

constexpr std::uint64_t kRealizationStream = 0x6b6c2d6d63ull;
constexpr std::uint64_t kTrialStream = 0x747269616cull;

}  // namespace

double mc_mean(std::span<const double> values)
{
  if (values.empty())
  {
    throw ConfigError("Monte-Carlo mean of an empty sample");
  }
  return pairwise_sum(values) / static_cast<double>(values.size());
}

double mc_variance(std::span<const double> values)
{
  if (values.size() < 2)
  {
    throw ConfigError("Monte-Carlo variance needs at least two samples");
  }
  const double mean = mc_mean(values);
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); i++)
  {
    sq[i] = (values[i] - mean) * (values[i] - mean);
  }
  return pairwise_sum(sq) / static_cast<double>(values.size() - 1);
}

double clt_halfwidth(std::span<const double> values)
{
  return 1.96 * std::sqrt(mc_variance(values) / static_cast<double>(values.size()));
}

double combine_variance_bound(std::span<const double> outputs, std::span<const double> bounds)
{
  if (outputs.size() != bounds.size())
  {
    throw ConfigError("variance bound: outputs and bounds differ in length");
  }
  if (outputs.size() < 2)
  {
    throw ConfigError("variance bound needs at least two samples");
  }
  const double mean = mc_mean(outputs);
  const double e_bar = mc_mean(bounds);
  std::vector<double> terms(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); i++)
  {
    const double e = bounds[i] + e_bar;
    terms[i] = e * (2.0 * std::abs(outputs[i] - mean) + e);
  }
  return pairwise_sum(terms) / static_cast<double>(outputs.size() - 1);
}

double total_error_bound(const ReducedBasis &rb, const ParamVec &mu_full,
                         const OnlineSolution &online)
{
  const Eigen::VectorXd theta_full = rb.theta.evaluate(mu_full);
  const Eigen::VectorXd theta_trunc = rb.theta.evaluate(online.mu);
  const Eigen::VectorXd &u = online.coefficients;
  const std::size_t n = static_cast<std::size_t>(u.size());
  const double r2 = residual_dual_norm_sq(rb, theta_full, u);
  const double alpha = coercivity_lb(rb.theta, mu_full);
  // r(u) = l(u) - a_full(u, u) = [l(u) - a_K(u, u)] + (a_K - a_full)(u, u); the bracket is the
  // reduced Galerkin residual and vanishes up to roundoff.
  const Eigen::MatrixXd c_trunc = reduced_matrix(rb, theta_trunc, n);
  const Eigen::MatrixXd c_diff = reduced_matrix(rb, theta_trunc - theta_full, n);
  const double galerkin = rb.reduced_load.head(u.size()).dot(u) - u.dot(c_trunc * u);
  const double r_u = galerkin + u.dot(c_diff * u);
  return r2 / alpha + std::abs(r_u);
}

std::vector<Eigen::VectorXd> draw_realizations(const KLBasis &kl, std::size_t m, std::uint64_t seed,
                                               const std::vector<std::size_t> &levels,
                                               std::size_t *rejections)
{
  std::vector<Eigen::VectorXd> out(m);
  std::vector<std::size_t> rejected(m, 0);
  parallel_for(m,
               [&](std::size_t i)
               {
                 std::mt19937_64 rng(derive_seed(seed, kRealizationStream, i));
                 FieldRealization r = sample_y(kl, kl.size(), rng, levels);
                 out[i] = std::move(r.y);
                 rejected[i] = r.rejections;
               });
  std::size_t total = 0;
  for (std::size_t r : rejected)
  {
    total += r;
  }
  check_rejection_rate(m, total);
  if (rejections)
  {
    *rejections = total;
  }
  return out;
}

MCResult mc_outputs(const ReducedBasis &rb, const KLBasis &kl,
                    const std::vector<Eigen::VectorXd> &realizations, std::size_t k_trunc,
                    std::size_t n, double sigma0)
{
  const std::size_t m = realizations.size();
  if (m < 2)
  {
    throw ConfigError("Monte-Carlo run needs M >= 2");
  }
  if (rb.theta.kind != ModelKind::TSinkRobin || rb.theta.kl_terms != kl.size())
  {
    throw ConfigError("Monte-Carlo run: reduced basis is not a heat sink basis with the "
                      "KL basis' number of modes");
  }
  if (k_trunc < 1 || k_trunc > kl.size())
  {
    std::ostringstream msg;
    msg << "Monte-Carlo run: truncation K = " << k_trunc << " exceeds the " << kl.size()
        << " stored modes";
    throw ConfigError(msg.str());
  }
  MCResult res;
  res.k = k_trunc;
  res.m = m;
  res.n = n == 0 ? rb.size() : n;
  res.outputs.resize(m);
  res.per_sample_bounds.resize(m);
  res.rb_bounds.resize(m);
  parallel_for(m,
               [&](std::size_t i)
               {
                 const ParamVec full = field_parameter(kl, sigma0, realizations[i]);
                 const ParamVec trunc = rb.theta.truncate(full, k_trunc);
                 const OnlineSolution sol = online_solve(rb, trunc, res.n);
                 res.outputs[i] = sol.output;
                 res.rb_bounds[i] = sol.output_bound;
                 res.per_sample_bounds[i] = total_error_bound(rb, full, sol);
               });
  res.mean = mc_mean(res.outputs);
  res.variance = mc_variance(res.outputs);
  res.clt_halfwidth = clt_halfwidth(res.outputs);
  res.delta_e = mc_mean(res.per_sample_bounds);
  res.delta_v = combine_variance_bound(res.outputs, res.per_sample_bounds);
  return res;
}

MCResult mc_outputs(const ReducedBasis &rb, const KLBasis &kl, const MCOptions &options)
{
  std::vector<std::size_t> levels = options.shared_levels;
  levels.push_back(options.k_trunc);
  std::size_t rejections = 0;
  const auto ys = draw_realizations(kl, options.m, options.seed, levels, &rejections);
  MCResult res = mc_outputs(rb, kl, ys, options.k_trunc, options.n, options.sigma0);
  res.rejections = rejections;
  return res;
}

std::vector<ParamVec> heat_sink_trial(const KLBasis &kl, std::size_t count, std::uint64_t seed,
                                      double sigma0, const std::vector<std::size_t> &truncations)
{
  const auto ys = draw_realizations(kl, count, derive_seed(seed, kTrialStream, 0), truncations);
  std::vector<ParamVec> trial(count);
  for (std::size_t i = 0; i < count; i++)
  {
    const std::size_t k = truncations.empty() ? kl.size() : truncations[i % truncations.size()];
    trial[i] = field_parameter(kl, sigma0, ys[i].head(static_cast<Eigen::Index>(std::min(k, kl.size()))));
  }
  return trial;
}

std::vector<MCResult> uq_sweep(const ReducedBasis &rb, const KLBasis &kl,
                               const std::vector<std::size_t> &ks, const std::vector<std::size_t> &ns,
                               std::size_t m, std::uint64_t seed, double sigma0)
{
  std::size_t rejections = 0;
  const auto ys = draw_realizations(kl, m, seed, ks, &rejections);
  std::vector<MCResult> rows;
  for (std::size_t k : ks)
  {
    for (std::size_t n : ns)
    {
      rows.push_back(mc_outputs(rb, kl, ys, k, n, sigma0));
      rows.back().rejections = rejections;
      // Per-sample vectors are not needed in sweep output.
      rows.back().outputs.clear();
      rows.back().per_sample_bounds.clear();
      rows.back().rb_bounds.clear();
    }
  }
  return rows;
}

}  // namespace crb
