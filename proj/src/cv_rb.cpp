// SPDX-License-Identifier: Apache-2.0

#include "crb/cv_rb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>
#include <Eigen/SVD>

#include "crb/uq_mc.hpp"

namespace crb
{

namespace
{

constexpr std::uint64_t kInitStream = 0x63762d696e6974ull;
constexpr std::uint64_t kReferenceStream = 0x63762d726566ull;
constexpr std::uint64_t kGreedyStream = 0x63762d677265ull;
constexpr std::uint64_t kSweepStream = 0x63762d737765ull;

double model_dt(const SDEModel &model, std::size_t steps)
{
  if (steps < 1)
  {
    throw ConfigError("control-variate runs need at least one time step");
  }
  return model.horizon / static_cast<double>(steps);
}

Control make_alg2_control(const CVBasis &basis, const SDEModel &model, const ParamVec &lambda,
                          const CVGreedyOptions &options)
{
  if (basis.alg2_control == Alg2Control::Kolmogorov)
  {
    const std::size_t ts = options.grid_t_steps == 0 ? options.steps : options.grid_t_steps;
    return kolmogorov_solve_1d(model, lambda, ts, options.grid);
  }
  const auto *dm = dynamic_cast<const DumbbellModel *>(&model);
  if (!dm)
  {
    throw ConfigError("the exact Hookean control needs a dumbbell model");
  }
  DumbbellModel hook(dm->dimension(), DumbbellForce::Hookean);
  hook.component = dm->component;
  hook.horizon = dm->horizon;
  hook.x0 = dm->x0;
  return HookeanExactControl(hook, lambda, options.steps);
}

}  // namespace

std::string to_string(CVKind k)
{
  return k == CVKind::Alg1 ? "alg1" : "alg2";
}

CVKind parse_cv_kind(const std::string &s)
{
  if (s == "alg1")
  {
    return CVKind::Alg1;
  }
  if (s == "alg2")
  {
    return CVKind::Alg2;
  }
  throw ConfigError("unknown control-variate algorithm '" + s + "' (expected alg1 or alg2)");
}

std::string to_string(Alg2Control c)
{
  return c == Alg2Control::Kolmogorov ? "kolmogorov" : "hookean_exact";
}

Alg2Control parse_alg2_control(const std::string &s)
{
  if (s == "kolmogorov")
  {
    return Alg2Control::Kolmogorov;
  }
  if (s == "hookean_exact")
  {
    return Alg2Control::HookeanExact;
  }
  throw ConfigError("unknown control generator '" + s + "' (expected kolmogorov or hookean_exact)");
}

CovarianceSystem covariance_system(std::span<const double> z, const Eigen::MatrixXd &controls)
{
  const auto m = static_cast<Eigen::Index>(z.size());
  if (controls.rows() != m)
  {
    throw ConfigError("control table and outputs differ in path count");
  }
  const Eigen::Map<const Eigen::VectorXd> zv(z.data(), m);
  const double md = static_cast<double>(m);
  const Eigen::RowVectorXd ym = controls.colwise().sum() / md;
  CovarianceSystem s;
  s.c = controls.transpose() * controls / md - ym.transpose() * ym;
  s.b = controls.transpose() * zv / md - (zv.sum() / md) * ym.transpose();
  return s;
}

double combination_variance(std::span<const double> z, const Eigen::MatrixXd &controls,
                            const Eigen::VectorXd &alpha)
{
  const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(z.size()));
  const Eigen::VectorXd r = zv - controls * alpha;
  return mc_variance(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())));
}

CVEstimate solve_combination(std::span<const double> z, const Eigen::MatrixXd &controls)
{
  const auto m = static_cast<Eigen::Index>(z.size());
  const Eigen::Index n = controls.cols();
  if (controls.rows() != m)
  {
    throw ConfigError("control table and outputs differ in path count");
  }
  if (m < n + 1 || m < 2)
  {
    std::ostringstream msg;
    msg << "control-variate combination is underdetermined: " << m << " paths for " << n << " controls";
    throw ConfigError(msg.str());
  }
  const Eigen::Map<const Eigen::VectorXd> zv(z.data(), m);
  CVEstimate e;
  e.n = static_cast<std::size_t>(n);
  e.alpha_star = Eigen::VectorXd::Zero(n);
  if (n > 0)
  {
    const Eigen::MatrixXd yc = controls.rowwise() - controls.colwise().mean();
    const Eigen::VectorXd zc = zv.array() - zv.mean();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(yc, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(kCombinationCutoff);
    if (svd.rank() > 0)
    {
      e.alpha_star = svd.solve(zc);
    }
  }
  const Eigen::VectorXd r = zv - controls * e.alpha_star;
  const std::span<const double> rs(r.data(), static_cast<std::size_t>(m));
  e.mean = mc_mean(rs);
  e.variance = mc_variance(rs);
  e.raw_mean = mc_mean(z);
  e.raw_variance = mc_variance(z);
  e.ratio = e.variance > 0.0 ? e.raw_variance / e.variance : std::numeric_limits<double>::infinity();
  e.clt_halfwidth = 1.96 * std::sqrt(e.variance / static_cast<double>(m));
  e.raw_clt_halfwidth = 1.96 * std::sqrt(e.raw_variance / static_cast<double>(m));
  e.normalized_variance = e.variance / (e.mean * e.mean);
  e.raw_normalized_variance = e.raw_variance / (e.raw_mean * e.raw_mean);
  return e;
}

CVOnlineContext prepare_online(const CVBasis &basis, const SDEModel &model, const IncrementSource &src)
{
  CVOnlineContext ctx;
  ctx.basis = &basis;
  ctx.increments = StoredIncrements::capture(src);
  if (basis.kind == CVKind::Alg1)
  {
    if (basis.alg1_refs.size() != basis.size())
    {
      throw ConfigError("Alg1 basis is missing reference means");
    }
    ctx.alg1_controls.resize(static_cast<Eigen::Index>(src.paths()), static_cast<Eigen::Index>(basis.size()));
    for (std::size_t i = 0; i < basis.size(); i++)
    {
      const PathEnsemble e = simulate(model, basis.selected[i], ctx.increments);
      for (std::size_t p = 0; p < e.m; p++)
      {
        ctx.alg1_controls(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) =
            e.z_values[p] - basis.alg1_refs[i];
      }
    }
  }
  else if (basis.alg2_controls.size() != basis.size())
  {
    throw ConfigError("Alg2 basis is missing control functions");
  }
  return ctx;
}

Eigen::MatrixXd build_controls(const CVBasis &basis, const SDEModel &model, const ParamVec &lambda,
                               const CVOnlineContext &ctx, std::vector<double> &z, std::size_t *outside)
{
  if (ctx.basis != &basis)
  {
    throw ConfigError("online context was prepared for a different basis");
  }
  if (basis.kind == CVKind::Alg1)
  {
    z = simulate(model, lambda, ctx.increments).z_values;
    if (outside)
    {
      *outside = 0;
    }
    return ctx.alg1_controls;
  }
  std::vector<const Control *> cs;
  for (const Control &c : basis.alg2_controls)
  {
    cs.push_back(&c);
  }
  Eigen::MatrixXd y;
  z = simulate_with_controls(model, lambda, ctx.increments, cs, y, outside).z_values;
  return y;
}

CVEstimate online_estimate(const CVBasis &basis, const SDEModel &model, const ParamVec &lambda,
                           const CVOnlineContext &ctx, std::size_t n)
{
  if (n > basis.size())
  {
    throw ConfigError("requested more control variates than the basis holds");
  }
  std::vector<double> z;
  std::size_t outside = 0;
  const Eigen::MatrixXd y = build_controls(basis, model, lambda, ctx, z, &outside);
  const Eigen::Index cols = n == 0 ? y.cols() : static_cast<Eigen::Index>(n);
  CVEstimate e = solve_combination(z, y.leftCols(cols));
  e.lambda = lambda;
  e.grid_outside = outside;
  return e;
}

CVEstimate online_estimate(const CVBasis &basis, const SDEModel &model, const ParamVec &lambda,
                           std::size_t m, std::uint64_t seed, std::size_t n)
{
  const SeededIncrements src(m, basis.steps, model.dimension(), model_dt(model, basis.steps), seed);
  const CVOnlineContext ctx = prepare_online(basis, model, src);
  return online_estimate(basis, model, lambda, ctx, n);
}

CVBasis greedy_offline_cv(const SDEModel &model, const std::vector<ParamVec> &trial,
                          const CVGreedyOptions &options)
{
  if (trial.empty())
  {
    throw ConfigError("control-variate greedy needs a non-empty trial sample");
  }
  if (options.n_max < 1 || options.m_small < 2)
  {
    throw ConfigError("control-variate greedy needs n_max >= 1 and m_small >= 2");
  }
  if (options.kind == CVKind::Alg1 && options.m_large < 2)
  {
    throw ConfigError("Alg1 needs m_large >= 2");
  }
  const double dt = model_dt(model, options.steps);
  CVBasis basis;
  basis.kind = options.kind;
  basis.m_small = options.m_small;
  basis.m_large = options.kind == CVKind::Alg1 ? options.m_large : 0;
  basis.alg2_control = options.alg2_control;
  basis.steps = options.steps;
  basis.seed = options.seed;

  std::vector<bool> taken(trial.size(), false);
  auto add = [&](std::size_t t)
  {
    const ParamVec &lambda = trial[t];
    taken[t] = true;
    if (options.kind == CVKind::Alg1)
    {
      const SeededIncrements ref(options.m_large, options.steps, model.dimension(), dt,
                                 derive_seed(options.seed, kReferenceStream, basis.size()));
      const PathEnsemble e = simulate(model, lambda, ref);
      basis.alg1_refs.push_back(mc_mean(e.z_values));
      basis.alg1_ref_halfwidths.push_back(clt_halfwidth(e.z_values));
    }
    else
    {
      basis.alg2_controls.push_back(make_alg2_control(basis, model, lambda, options));
    }
    basis.selected.push_back(lambda);
  };

  std::mt19937_64 rng(derive_seed(options.seed, kInitStream, 0));
  std::uniform_int_distribution<std::size_t> pick(0, trial.size() - 1);
  add(pick(rng));

  for (std::size_t it = 1; basis.size() < options.n_max; it++)
  {
    const SeededIncrements src(options.m_small, options.steps, model.dimension(), dt,
                               derive_seed(options.seed, kGreedyStream, it));
    const CVOnlineContext ctx = prepare_online(basis, model, src);
    double best = -1.0;
    std::size_t arg = trial.size();
    for (std::size_t t = 0; t < trial.size(); t++)
    {
      if (taken[t])
      {
        continue;
      }
      const double eps = online_estimate(basis, model, trial[t], ctx).variance;
      if (eps > best)
      {
        best = eps;
        arg = t;
      }
    }
    if (arg == trial.size())
    {
      break;
    }
    basis.trial_history.push_back(best);
    if (best <= options.eps)
    {
      break;
    }
    add(arg);
  }
  return basis;
}

std::vector<ParamVec> sample_box(std::size_t count, const ParamVec &lo, const ParamVec &hi, std::uint64_t seed)
{
  if (lo.size() != hi.size())
  {
    throw ConfigError("parameter box bounds differ in length");
  }
  for (std::size_t k = 0; k < lo.size(); k++)
  {
    if (!(hi[k] > lo[k]))
    {
      throw ConfigError("parameter box has an empty range");
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<ParamVec> out(count, ParamVec(lo.size()));
  for (auto &p : out)
  {
    for (std::size_t k = 0; k < lo.size(); k++)
    {
      std::uniform_real_distribution<double> u(lo[k], hi[k]);
      p[k] = u(rng);
    }
  }
  return out;
}

std::vector<CVSweepRow> cv_sweep(const CVBasis &basis, const SDEModel &model, const std::vector<ParamVec> &test,
                                 const std::vector<std::size_t> &ns, std::size_t m, std::uint64_t seed,
                                 std::vector<CVEstimate> *full_estimates)
{
  if (test.empty())
  {
    throw ConfigError("control-variate sweep needs a non-empty test sample");
  }
  for (std::size_t n : ns)
  {
    if (n < 1 || n > basis.size())
    {
      throw ConfigError("sweep basis size outside 1..N");
    }
  }
  const double dt = model_dt(model, basis.steps);
  std::vector<std::vector<CVEstimate>> est(ns.size(), std::vector<CVEstimate>(test.size()));
  for (std::size_t j = 0; j < test.size(); j++)
  {
    const SeededIncrements src(m, basis.steps, model.dimension(), dt, derive_seed(seed, kSweepStream, j));
    const CVOnlineContext ctx = prepare_online(basis, model, src);
    std::vector<double> z;
    std::size_t outside = 0;
    const Eigen::MatrixXd y = build_controls(basis, model, test[j], ctx, z, &outside);
    for (std::size_t r = 0; r < ns.size(); r++)
    {
      CVEstimate e = solve_combination(z, y.leftCols(static_cast<Eigen::Index>(ns[r])));
      e.lambda = test[j];
      e.grid_outside = outside;
      est[r][j] = std::move(e);
    }
  }
  std::vector<CVSweepRow> rows;
  for (std::size_t r = 0; r < ns.size(); r++)
  {
    CVSweepRow row;
    row.n = ns[r];
    std::vector<double> ratios, logs, norm, raw_norm;
    for (const CVEstimate &e : est[r])
    {
      ratios.push_back(e.ratio);
      logs.push_back(std::log(e.ratio));
      norm.push_back(e.normalized_variance);
      raw_norm.push_back(e.raw_normalized_variance);
    }
    row.min_ratio = *std::min_element(ratios.begin(), ratios.end());
    row.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    row.mean_ratio = pairwise_sum(ratios) / static_cast<double>(ratios.size());
    row.geomean_ratio = std::exp(pairwise_sum(logs) / static_cast<double>(logs.size()));
    row.min_normalized = *std::min_element(norm.begin(), norm.end());
    row.max_normalized = *std::max_element(norm.begin(), norm.end());
    row.mean_normalized = pairwise_sum(norm) / static_cast<double>(norm.size());
    row.mean_raw_normalized = pairwise_sum(raw_norm) / static_cast<double>(raw_norm.size());
    rows.push_back(row);
  }
  if (full_estimates && !ns.empty())
  {
    *full_estimates = est.back();
  }
  return rows;
}

}  // namespace crb
