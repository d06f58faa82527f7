// SPDX-License-Identifier: Apache-2.0

#include "crb/reduced_basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace crb
{

Eigen::MatrixXd reduced_matrix(const ReducedBasis &rb, const Eigen::VectorXd &theta, std::size_t n)
{
  const auto m = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t q = 0; q < rb.q_count(); q++)
  {
    c.noalias() += theta[q] * rb.reduced_stiffness[q].topLeftCorner(m, m);
  }
  return c;
}

double residual_dual_norm_sq(const ReducedBasis &rb, const Eigen::VectorXd &theta,
                             const Eigen::VectorXd &coefficients)
{
  const std::size_t n = static_cast<std::size_t>(coefficients.size());
  const std::size_t Q = rb.q_count();
  const auto m = static_cast<Eigen::Index>(1 + n * Q);
  Eigen::VectorXd c(m);
  c[0] = 1.0;
  for (std::size_t k = 0; k < n; k++)
  {
    for (std::size_t q = 0; q < Q; q++)
    {
      c[ReducedBasis::slot(q, k, Q)] = -theta[q] * coefficients[k];
    }
  }
  const double r2 = c.dot(rb.riesz_gram.topLeftCorner(m, m).selfadjointView<Eigen::Upper>() * c);
  return std::max(0.0, r2);
}

OnlineSolution online_solve(const ReducedBasis &rb, const ParamVec &mu, std::size_t n)
{
  if (n == 0)
  {
    n = rb.size();
  }
  if (n == 0 || n > rb.size())
  {
    std::ostringstream msg;
    msg << "online solve: requested " << n << " basis functions, basis has " << rb.size();
    throw ConfigError(msg.str());
  }
  OnlineSolution sol;
  sol.mu = mu;
  sol.alpha_lb = coercivity_lb(rb.theta, mu);
  const Eigen::VectorXd theta = rb.theta.evaluate(mu);
  const Eigen::MatrixXd c = reduced_matrix(rb, theta, n);
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success || llt.rcond() * kOnlineConditionLimit < 1.0)
  {
    throw NumericalError("online solve: reduced system is numerically singular (degenerate basis)");
  }
  const auto m = static_cast<Eigen::Index>(n);
  sol.coefficients = llt.solve(rb.reduced_load.head(m));
  sol.output = rb.reduced_load.head(m).dot(sol.coefficients);
  sol.residual_sq = residual_dual_norm_sq(rb, theta, sol.coefficients);
  sol.output_bound = sol.residual_sq / sol.alpha_lb;
  sol.energy_bound = std::sqrt(sol.output_bound);
  return sol;
}

GramSchmidtResult gram_schmidt(const std::vector<Eigen::VectorXd> &snapshots,
                               const SparseMatrix &x_gram, double drop_tol)
{
  GramSchmidtResult out;
  std::vector<Eigen::VectorXd> kept, x_kept;
  for (std::size_t i = 0; i < snapshots.size(); i++)
  {
    Eigen::VectorXd v = snapshots[i];
    const double norm0 = std::sqrt(std::max(0.0, v.dot(x_gram * v)));
    for (int pass = 0; pass < 2 && norm0 > 0.0; pass++)
    {
      for (std::size_t j = 0; j < kept.size(); j++)
      {
        v -= x_kept[j].dot(v) * kept[j];
      }
    }
    Eigen::VectorXd xv = x_gram * v;
    const double norm = std::sqrt(std::max(0.0, v.dot(xv)));
    if (!(norm0 > 0.0) || norm < drop_tol * norm0)
    {
      out.rejected.push_back(i);
      continue;
    }
    kept.push_back(v / norm);
    x_kept.push_back(xv / norm);
  }
  if (kept.empty())
  {
    throw NumericalError("Gram-Schmidt: every snapshot is degenerate, basis would be empty");
  }
  out.basis.resize(snapshots.front().size(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); j++)
  {
    out.basis.col(static_cast<Eigen::Index>(j)) = kept[j];
  }
  return out;
}

RBBuilder::RBBuilder(const AffineForm &form) : form_(&form)
{
  x_solver_.compute(form.x_gram);
  if (x_solver_.info() != Eigen::Success)
  {
    throw NumericalError("reduced basis: factorization of the X inner product failed");
  }
  rb_.form_hash = form.provenance_hash();
  rb_.theta = form.theta;
  rb_.theta_ref = form.theta.evaluate(form.theta.reference);
  const auto n = static_cast<Eigen::Index>(form.size());
  rb_.basis.resize(n, 0);
  rb_.reduced_stiffness.assign(form.q_count(), Eigen::MatrixXd(0, 0));
  rb_.reduced_load.resize(0);
  representers_.push_back(x_solver_.solve(form.load));
  rb_.riesz_gram.resize(1, 1);
  rb_.riesz_gram(0, 0) = form.load.dot(representers_[0]);
}

bool RBBuilder::add_snapshot(const ParamVec &mu, const Eigen::VectorXd &u, double drop_tol)
{
  const SparseMatrix &x = form_->x_gram;
  const Eigen::Index big = rb_.basis.rows();
  if (u.size() != big)
  {
    throw ConfigError("reduced basis: snapshot size does not match the truth space");
  }
  Eigen::VectorXd v = u;
  const double norm0 = std::sqrt(std::max(0.0, v.dot(x * v)));
  if (!(norm0 > 0.0))
  {
    return false;
  }
  for (int pass = 0; pass < 2; pass++)
  {
    for (Eigen::Index j = 0; j < rb_.basis.cols(); j++)
    {
      const Eigen::VectorXd xz = x * rb_.basis.col(j);
      v -= xz.dot(v) * rb_.basis.col(j);
    }
  }
  const double norm = std::sqrt(std::max(0.0, v.dot(x * v)));
  if (norm < drop_tol * norm0)
  {
    return false;
  }
  v /= norm;

  const std::size_t N = rb_.size();
  const std::size_t Q = form_->q_count();
  rb_.basis.conservativeResize(Eigen::NoChange, static_cast<Eigen::Index>(N + 1));
  rb_.basis.col(static_cast<Eigen::Index>(N)) = v;
  rb_.selected_mu.push_back(mu);

  rb_.reduced_load.conservativeResize(static_cast<Eigen::Index>(N + 1));
  rb_.reduced_load[static_cast<Eigen::Index>(N)] = form_->load.dot(v);

  std::vector<Eigen::VectorXd> applied(Q);
  for (std::size_t q = 0; q < Q; q++)
  {
    applied[q] = form_->terms[q] * v;
    Eigen::MatrixXd &c = rb_.reduced_stiffness[q];
    c.conservativeResize(static_cast<Eigen::Index>(N + 1), static_cast<Eigen::Index>(N + 1));
    for (std::size_t i = 0; i <= N; i++)
    {
      const double entry = rb_.basis.col(static_cast<Eigen::Index>(i)).dot(applied[q]);
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(N)) = entry;
      c(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(i)) = entry;
    }
  }

  std::vector<Eigen::VectorXd> fresh(Q);
  parallel_for(Q, [&](std::size_t q) { fresh[q] = x_solver_.solve(applied[q]); });
  for (auto &r : fresh)
  {
    representers_.push_back(std::move(r));
  }

  const std::size_t total = representers_.size();
  const std::size_t first = total - Q;
  Eigen::MatrixXd &g = rb_.riesz_gram;
  g.conservativeResize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(total));
  parallel_for(Q,
               [&](std::size_t q)
               {
                 const auto row = static_cast<Eigen::Index>(first + q);
                 for (std::size_t j = 0; j < total; j++)
                 {
                   // Only the upper triangle of new rows; lower part mirrored below.
                   if (j >= first && j < first + q)
                   {
                     continue;
                   }
                   const double entry = applied[q].dot(representers_[j]);
                   g(row, static_cast<Eigen::Index>(j)) = entry;
                 }
               });
  for (std::size_t q = 0; q < Q; q++)
  {
    const auto row = static_cast<Eigen::Index>(first + q);
    for (std::size_t j = 0; j < total; j++)
    {
      if (j >= first && j < first + q)
      {
        g(row, static_cast<Eigen::Index>(j)) = g(static_cast<Eigen::Index>(j), row);
      }
      else
      {
        g(static_cast<Eigen::Index>(j), row) = g(row, static_cast<Eigen::Index>(j));
      }
    }
  }
  return true;
}

bool RBBuilder::add_parameter(const ParamVec &mu)
{
  return add_snapshot(mu, solve_truth(*form_, mu).coefficients);
}

OnlineSolution RBBuilder::solve_or_enrich(const ParamVec &mu, double eps)
{
  if (rb_.size() == 0)
  {
    add_parameter(mu);
    return online_solve(rb_, mu);
  }
  OnlineSolution sol = online_solve(rb_, mu);
  if (sol.output_bound > eps && add_parameter(mu))
  {
    sol = online_solve(rb_, mu);
  }
  return sol;
}

void greedy_extend(RBBuilder &builder, const std::vector<ParamVec> &trial,
                   const GreedyOptions &options)
{
  if (trial.empty())
  {
    throw ConfigError("greedy: trial sample is empty");
  }
  if (!(options.eps > 0.0) && options.n_max < 1)
  {
    throw ConfigError("greedy: need eps > 0 or n_max >= 1");
  }
  ReducedBasis &rb = builder.basis();
  std::vector<bool> taken(trial.size(), false);
  for (std::size_t i = 0; i < trial.size(); i++)
  {
    taken[i] =
        std::find(rb.selected_mu.begin(), rb.selected_mu.end(), trial[i]) != rb.selected_mu.end();
  }

  if (rb.size() == 0)
  {
    std::size_t first = 0;
    if (options.init_max_output)
    {
      const std::size_t probe = std::min(options.init_output_probe, trial.size());
      std::vector<double> s(probe);
      parallel_for(probe,
                   [&](std::size_t i) { s[i] = std::abs(solve_truth(builder.form(), trial[i]).output); });
      first = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    }
    else
    {
      std::mt19937_64 rng(options.seed);
      first = std::uniform_int_distribution<std::size_t>(0, trial.size() - 1)(rng);
    }
    if (!builder.add_parameter(trial[first]))
    {
      throw NumericalError("greedy: initial snapshot is zero, basis would be empty");
    }
    taken[first] = true;
  }

  std::vector<double> bound(trial.size());
  for (;;)
  {
    const std::size_t n = rb.size();
    parallel_for(trial.size(),
                 [&](std::size_t i)
                 {
                   bound[i] = taken[i] ? -std::numeric_limits<double>::infinity()
                                       : online_solve(rb, trial[i], n).output_bound;
                 });
    std::size_t best = trial.size();
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < trial.size(); i++)
    {
      if (!taken[i] && bound[i] > best_value)
      {
        best_value = bound[i];
        best = i;
      }
    }
    if (best == trial.size())
    {
      break;
    }
    rb.greedy_history.push_back(best_value);
    if (best_value <= options.eps || n >= options.n_max)
    {
      break;
    }
    if (!builder.add_parameter(trial[best]))
    {
      break;
    }
    taken[best] = true;
  }
}

ReducedBasis greedy_offline(const AffineForm &form, const std::vector<ParamVec> &trial,
                            const GreedyOptions &options)
{
  RBBuilder builder(form);
  greedy_extend(builder, trial, options);
  return builder.basis();
}

std::vector<ParamVec> sample_parameters(const ThetaMap &theta, std::size_t count,
                                        std::mt19937_64 &rng)
{
  std::vector<ParamVec> out;
  out.reserve(count);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::size_t attempts = 0;
  while (out.size() < count)
  {
    if (++attempts > 1000 * count + 1000)
    {
      throw ConfigError("parameter sampling: too few admissible points in the parameter box");
    }
    ParamVec mu(theta.param_dim());
    for (std::size_t i = 0; i < mu.size(); i++)
    {
      const ParamRange &r = theta.ranges[i];
      const double t = u01(rng);
      if (r.fixed())
      {
        mu[i] = r.lo;
      }
      else if (r.lo > 0.0)
      {
        mu[i] = r.lo * std::pow(r.hi / r.lo, t);
      }
      else
      {
        mu[i] = r.lo + (r.hi - r.lo) * t;
      }
    }
    if (theta.admissible(mu))
    {
      out.push_back(std::move(mu));
    }
  }
  return out;
}

std::vector<EffectivityRow> effectivity_report(const AffineForm &form, const ReducedBasis &rb,
                                               const std::vector<ParamVec> &sample, std::size_t n)
{
  std::vector<EffectivityRow> rows(sample.size());
  parallel_for(sample.size(),
               [&](std::size_t i)
               {
                 EffectivityRow &row = rows[i];
                 row.mu = sample[i];
                 row.truth = solve_truth(form, sample[i]).output;
                 const OnlineSolution sol = online_solve(rb, sample[i], n);
                 row.reduced = sol.output;
                 row.error = row.truth - row.reduced;
                 row.bound = sol.output_bound;
                 const double ratio = continuity_ub(rb.theta, sample[i]) / sol.alpha_lb;
                 row.ceiling = ratio * ratio;
                 row.ok = std::abs(row.error) <= row.bound + kBoundSlack;
                 if (std::abs(row.error) > kEffectivityErrorGuard)
                 {
                   row.effectivity = row.bound / std::abs(row.error);
                   row.ok = row.ok && *row.effectivity <= row.ceiling;
                 }
               });
  return rows;
}

}  // namespace crb
